//! Single-beam codebook: one wideband oversampled DFT beam plus a per-subband
//! co-phasing term between the two polarizations.
//!
//! Payload: beam index `i1·n2·o2 + i2` in `ceil_log2(n1·o1·n2·o2)` bits, then
//! one `P`-bit co-phase index per subband. Codeword `[b; e^{jφ}·b] / √2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ceil_log2, BitWriter, DftGrid, FeedbackMessage, FeedbackOverhead, ReconstructedCsi, SchemeTag};
use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::numerics::{dft_beam, inner, C64};
use crate::pilots::SubbandChannel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Type1Config {
    pub subbands: usize,
    pub phase_bits: u32,
    pub grid: DftGrid,
}

impl Type1Config {
    pub fn new(subbands: usize, phase_bits: u32) -> Result<Self> {
        let cfg = Self {
            subbands,
            phase_bits,
            grid: DftGrid::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.subbands == 0 {
            return Err(Error::InvalidArgument("Type I needs at least one subband".into()));
        }
        if !(1..=16).contains(&self.phase_bits) {
            return Err(Error::InvalidArgument(format!("phase bits {} outside 1..=16", self.phase_bits)));
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        2 * self.grid.ports_per_pol()
    }

    fn beam_count(&self) -> usize {
        self.grid.n1 * self.grid.o1 * self.grid.n2 * self.grid.o2
    }

    fn beam_bits(&self) -> u32 {
        ceil_log2(self.beam_count() as u64)
    }

    fn beam(&self, index: usize) -> Vec<C64> {
        let cols = self.grid.n2 * self.grid.o2;
        let g = &self.grid;
        dft_beam(g.n1, g.n2, g.o1, g.o2, index / cols, index % cols).expect("index inside grid")
    }
}

impl FeedbackOverhead for Type1Config {
    /// `ceil_log2(n1·o1·n2·o2) + S·P`.
    fn bits_per_report(&self) -> usize {
        self.beam_bits() as usize + self.subbands * self.phase_bits as usize
    }
}

pub fn type1_encode(sb: &SubbandChannel, cfg: &Type1Config) -> Result<FeedbackMessage> {
    cfg.validate()?;
    if sb.nt != cfg.nt() || sb.subbands() != cfg.subbands {
        return Err(Error::InvalidArgument(format!(
            "channel ({} ports, {} subbands) does not match Type I config ({} ports, {} subbands)",
            sb.nt,
            sb.subbands(),
            cfg.nt(),
            cfg.subbands
        )));
    }
    let half = cfg.grid.ports_per_pol();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for i in 0..cfg.beam_count() {
        let b = cfg.beam(i);
        let p: f64 = (0..sb.subbands())
            .map(|s| {
                let v = sb.primary(s);
                inner(&b, &v[..half]).norm_sqr() + inner(&b, &v[half..]).norm_sqr()
            })
            .sum();
        if p > best.0 {
            best = (p, i);
        }
    }
    let beam = cfg.beam(best.1);
    let levels = 1u64 << cfg.phase_bits;
    let mut w = BitWriter::new();
    w.push(best.1 as u64, cfg.beam_bits());
    for s in 0..sb.subbands() {
        let v = sb.primary(s);
        let (c0, c1) = (inner(&beam, &v[..half]), inner(&beam, &v[half..]));
        let mut pick = (f64::NEG_INFINITY, 0u64);
        for j in 0..levels {
            let phi = 2.0 * PI * j as f64 / levels as f64;
            let gain = (c0 + C64::from_polar(1.0, -phi) * c1).norm();
            if gain > pick.0 + 1e-12 {
                pick = (gain, j);
            }
        }
        w.push(pick.1, cfg.phase_bits);
    }
    let msg = FeedbackMessage::from_writer(SchemeTag::Type1, config_hash(cfg), w);
    assert_eq!(msg.bit_len, cfg.bits_per_report(), "Type I payload length diverged from overhead formula");
    Ok(msg)
}

pub fn type1_decode(
    msg: &FeedbackMessage,
    cfg: &Type1Config,
    partition: &[(usize, usize)],
) -> Result<ReconstructedCsi> {
    cfg.validate()?;
    msg.expect(SchemeTag::Type1, config_hash(cfg), cfg.bits_per_report())?;
    if partition.len() != cfg.subbands {
        return Err(Error::InvalidArgument("partition does not match subband count".into()));
    }
    let mut r = msg.reader();
    let index = r.read(cfg.beam_bits())? as usize;
    if index >= cfg.beam_count() {
        return Err(Error::Format(format!("beam index {index} out of range")));
    }
    let beam = cfg.beam(index);
    let levels = (1u64 << cfg.phase_bits) as f64;
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut vectors = Vec::with_capacity(cfg.subbands);
    for _ in 0..cfg.subbands {
        let phi = 2.0 * PI * r.read(cfg.phase_bits)? as f64 / levels;
        let rot = C64::from_polar(scale, phi);
        let v: Vec<C64> = beam
            .iter()
            .map(|b| b * scale)
            .chain(beam.iter().map(|b| b * rot))
            .collect();
        vectors.push(v);
    }
    ReconstructedCsi::new(partition.to_vec(), vectors)
}
