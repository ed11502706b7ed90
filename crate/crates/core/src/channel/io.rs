//! `CSID` dataset files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CSID" | version u32 | k u32 | nr u32 | nt u32 | n u32
//! n × k × nr × nt × (re f32, im f32)      subcarrier-major, then rx, then tx
//! json_len u32 | provenance JSON (UTF-8)
//! ```
//!
//! The same format imports externally measured channels; only `config`,
//! `config_hash`, `seed` and `algorithm` are required in the JSON.

use std::io::{Read, Write};

use super::{ChannelTensor, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::numerics::C64;

pub const DATASET_MAGIC: &[u8; 4] = b"CSID";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    let dims = [ds.k, ds.nr, ds.nt, ds.samples.len()];
    let mut header = Vec::with_capacity(24);
    header.extend_from_slice(DATASET_MAGIC);
    header.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(ds.k * ds.nr * ds.nt * 8);
    for s in &ds.samples {
        if s.dims() != (ds.k, ds.nr, ds.nt) {
            return Err(Error::Format(format!("sample dims {:?} differ from dataset", s.dims())));
        }
        buf.clear();
        for v in s.data() {
            buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            buf.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    let json = serde_json::to_vec(&ds.provenance)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("missing magic: {e}")))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected CSID")));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let k = read_u32(&mut r)? as usize;
    let nr = read_u32(&mut r)? as usize;
    let nt = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let per = k * nr * nt;
    let mut buf = vec![0u8; per * 8];
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("sample {i} truncated: {e}")))?;
        let data = buf
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                C64::new(re as f64, im as f64)
            })
            .collect();
        samples.push(ChannelTensor::new(k, nr, nt, data)?);
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|e| Error::Format(format!("provenance truncated: {e}")))?;
    let provenance: Provenance = serde_json::from_slice(&json)?;
    Ok(Dataset {
        k,
        nr,
        nt,
        samples,
        provenance,
    })
}
