//! Legacy CSI feedback: NR-style Type I/II codebooks and explicit scalar
//! quantization, with exact bit accounting.

mod bits;
mod explicit;
mod type1;
mod type2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fix_phase, normalize_unit, C64};
use crate::pilots::SubbandChannel;

pub use bits::{ceil_log2, BitReader, BitWriter};
pub use explicit::{explicit_decode, explicit_encode, ExplicitConfig, DEFAULT_EXPLICIT_BITS, DEFAULT_EXPLICIT_CLIP};
pub use type1::{type1_decode, type1_encode, Type1Config};
pub use type2::{binomial, type2_decode, type2_encode, Type2Config};

/// Oversampled 2-D DFT codebook geometry (per polarization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DftGrid {
    pub n1: usize,
    pub n2: usize,
    pub o1: usize,
    pub o2: usize,
}

impl Default for DftGrid {
    fn default() -> Self {
        Self {
            n1: 4,
            n2: 4,
            o1: 4,
            o2: 4,
        }
    }
}

impl DftGrid {
    pub fn ports_per_pol(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.o1 == 0 || self.o2 == 0 {
            return Err(Error::InvalidArgument("DFT grid dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SchemeTag {
    Type1 = 1,
    Type2 = 2,
    Explicit = 3,
    Latent = 4,
}

impl SchemeTag {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => SchemeTag::Type1,
            2 => SchemeTag::Type2,
            3 => SchemeTag::Explicit,
            4 => SchemeTag::Latent,
            _ => return Err(Error::Format(format!("unknown scheme tag {b}"))),
        })
    }
}

/// The bits crossing the uplink, plus enough metadata to check they are decoded
/// under the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackMessage {
    pub scheme: SchemeTag,
    pub config_hash: [u8; 8],
    pub bit_len: usize,
    /// MSB-first, zero-padded to a byte boundary.
    pub payload: Vec<u8>,
}

impl FeedbackMessage {
    pub fn from_writer(scheme: SchemeTag, config_hash: [u8; 8], w: BitWriter) -> Self {
        let (payload, bit_len) = w.finish();
        Self {
            scheme,
            config_hash,
            bit_len,
            payload,
        }
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader::new(&self.payload, self.bit_len)
    }

    /// Checks tag, configuration hash and exact length before decoding.
    pub fn expect(&self, scheme: SchemeTag, config_hash: [u8; 8], bit_len: usize) -> Result<()> {
        if self.scheme != scheme {
            return Err(Error::Format(format!("expected {scheme:?} message, got {:?}", self.scheme)));
        }
        if self.config_hash != config_hash {
            return Err(Error::Format("message was encoded under a different configuration".into()));
        }
        if self.bit_len != bit_len || self.payload.len() != bit_len.div_ceil(8) {
            return Err(Error::Format(format!(
                "payload holds {} bits, configuration needs {bit_len}",
                self.bit_len
            )));
        }
        Ok(())
    }

    /// `tag | hash[8] | bit_len u32 LE | payload`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.payload.len());
        out.push(self.scheme as u8);
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.bit_len as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 {
            return Err(Error::Format("feedback message shorter than its header".into()));
        }
        let scheme = SchemeTag::from_byte(bytes[0])?;
        let mut config_hash = [0u8; 8];
        config_hash.copy_from_slice(&bytes[1..9]);
        let bit_len = u32::from_le_bytes([bytes[9], bytes[10], bytes[11], bytes[12]]) as usize;
        let payload = bytes[13..].to_vec();
        if payload.len() != bit_len.div_ceil(8) {
            return Err(Error::Format(format!(
                "payload has {} bytes, bit length {bit_len} needs {}",
                payload.len(),
                bit_len.div_ceil(8)
            )));
        }
        Ok(Self {
            scheme,
            config_hash,
            bit_len,
            payload,
        })
    }
}

/// Per-report payload size of a feedback configuration.
pub trait FeedbackOverhead {
    fn bits_per_report(&self) -> usize;
}

/// `(bits per report, kbps)` at one report every `period` seconds.
pub fn overhead_bits(cfg: &dyn FeedbackOverhead, period: f64) -> (usize, f64) {
    let bits = cfg.bits_per_report();
    (bits, kbps(bits, period))
}

pub fn kbps(bits: usize, period: f64) -> f64 {
    bits as f64 / period / 1000.0
}

/// Channel directions recovered at the BS, one unit vector per frequency unit.
///
/// Vectors point along `hᴴ`; the channel row used for precoding is `vᴴ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedCsi {
    /// Half-open subcarrier ranges covering `0..k`.
    pub partition: Vec<(usize, usize)>,
    pub vectors: Vec<Vec<C64>>,
}

impl ReconstructedCsi {
    /// Normalizes and phase-fixes every vector.
    pub fn new(partition: Vec<(usize, usize)>, mut vectors: Vec<Vec<C64>>) -> Result<Self> {
        if partition.len() != vectors.len() || partition.is_empty() {
            return Err(Error::InvalidArgument("one vector per frequency unit".into()));
        }
        let nt = vectors[0].len();
        if vectors.iter().any(|v| v.len() != nt) {
            return Err(Error::InvalidArgument("vectors differ in length".into()));
        }
        for v in &mut vectors {
            normalize_unit(v);
            fix_phase(v);
        }
        Ok(Self { partition, vectors })
    }

    pub fn from_subbands(sb: &SubbandChannel) -> Self {
        Self {
            partition: sb.partition.clone(),
            vectors: (0..sb.subbands()).map(|s| sb.primary(s).to_vec()).collect(),
        }
    }

    pub fn nt(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn k(&self) -> usize {
        self.partition.last().map_or(0, |p| p.1)
    }

    /// Unit index covering subcarrier `f`.
    pub fn unit_of(&self, f: usize) -> usize {
        self.partition.partition_point(|&(_, hi)| hi <= f)
    }

    /// Re-expresses on a new partition by holding the vector of the unit that
    /// contains each new unit's first subcarrier.
    pub fn regrid(&self, partition: &[(usize, usize)]) -> Self {
        Self {
            partition: partition.to_vec(),
            vectors: partition
                .iter()
                .map(|&(lo, _)| self.vectors[self.unit_of(lo)].clone())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_bytes_round_trip() {
        let mut w = BitWriter::new();
        w.push(0b101, 3);
        w.push(0xABCD, 16);
        let m = FeedbackMessage::from_writer(SchemeTag::Type2, [7; 8], w);
        assert_eq!(m.bit_len, 19);
        assert_eq!(m.payload.len(), 3);
        let back = FeedbackMessage::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.to_bytes();
        bad.pop();
        assert!(FeedbackMessage::from_bytes(&bad).is_err());
        assert!(m.expect(SchemeTag::Type2, [7; 8], 20).is_err());
        assert!(m.expect(SchemeTag::Type1, [7; 8], 19).is_err());
    }

    #[test]
    fn overhead_is_linear_in_rate() {
        struct Fixed;
        impl FeedbackOverhead for Fixed {
            fn bits_per_report(&self) -> usize {
                640
            }
        }
        assert_eq!(overhead_bits(&Fixed, 5e-3), (640, 128.0));
        assert_eq!(overhead_bits(&Fixed, 10e-3).1, 64.0);
    }

    #[test]
    fn regrid_holds_subband_vectors() {
        let csi = ReconstructedCsi::new(
            vec![(0, 24), (24, 36)],
            vec![vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)], vec![C64::new(0.0, 0.0), C64::new(2.0, 0.0)]],
        )
        .unwrap();
        let rb: Vec<(usize, usize)> = (0..3).map(|i| (12 * i, 12 * i + 12)).collect();
        let fine = csi.regrid(&rb);
        assert_eq!(fine.vectors[1], csi.vectors[0]);
        assert_eq!(fine.vectors[2], vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert_eq!(csi.unit_of(23), 0);
        assert_eq!(csi.unit_of(24), 1);
    }
}
