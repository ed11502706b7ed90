//! Linear-combination codebook: `v = W₁·W₂⁽ˢ⁾`.
//!
//! Payload layout, MSB first:
//!
//! ```text
//! rotation index                      ceil_log2(o1·o2)
//! beam combination (combinadic)       ceil_log2(C(n1·n2, L))
//! per subband:
//!     strongest coefficient position  ceil_log2(2L)
//!     (2L − 1) × (amplitude A bits, phase P bits), skipping the strongest
//! ```
//!
//! Coefficients are ordered polarization-major, then beam.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ceil_log2, BitWriter, DftGrid, FeedbackMessage, FeedbackOverhead, ReconstructedCsi, SchemeTag};
use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::numerics::{dft_beam, inner, C64};
use crate::pilots::SubbandChannel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Type2Config {
    pub subbands: usize,
    /// Beams per polarization, shared by both.
    pub beams: usize,
    pub phase_bits: u32,
    pub amplitude_bits: u32,
    pub grid: DftGrid,
}

impl Type2Config {
    /// Maps a "codeword number" (total combined coefficients per polarization
    /// pair) to `codewords / 2` beams per polarization.
    pub fn from_codewords(subbands: usize, codewords: usize, phase_bits: u32, amplitude_bits: u32) -> Result<Self> {
        if codewords < 2 || codewords % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "Type II needs an even codeword number >= 2, got {codewords}"
            )));
        }
        let cfg = Self {
            subbands,
            beams: codewords / 2,
            phase_bits,
            amplitude_bits,
            grid: DftGrid::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.subbands == 0 {
            return Err(Error::InvalidArgument("Type II needs at least one subband".into()));
        }
        if self.beams == 0 || self.beams > self.grid.ports_per_pol() {
            return Err(Error::InvalidArgument(format!(
                "beam count {} outside 1..={}",
                self.beams,
                self.grid.ports_per_pol()
            )));
        }
        for (name, b) in [("phase", self.phase_bits), ("amplitude", self.amplitude_bits)] {
            if !(1..=16).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} bits {b} outside 1..=16")));
            }
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        2 * self.grid.ports_per_pol()
    }

    fn rotation_bits(&self) -> u32 {
        ceil_log2((self.grid.o1 * self.grid.o2) as u64)
    }

    fn combination_bits(&self) -> u32 {
        ceil_log2(binomial(self.grid.ports_per_pol() as u64, self.beams as u64))
    }

    fn position_bits(&self) -> u32 {
        ceil_log2(2 * self.beams as u64)
    }
}

impl FeedbackOverhead for Type2Config {
    /// `ceil_log2(o1·o2) + ceil_log2(C(n1·n2, L)) + S·(ceil_log2(2L) + (2L−1)(A+P))`.
    fn bits_per_report(&self) -> usize {
        let per_subband = self.position_bits() as usize
            + (2 * self.beams - 1) * (self.amplitude_bits + self.phase_bits) as usize;
        self.rotation_bits() as usize + self.combination_bits() as usize + self.subbands * per_subband
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Combinadic rank of an ascending subset.
fn rank_subset(sorted: &[usize]) -> u64 {
    sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| binomial(c as u64, i as u64 + 1))
        .sum()
}

fn unrank_subset(mut rank: u64, n: usize, k: usize) -> Result<Vec<usize>> {
    if rank >= binomial(n as u64, k as u64) {
        return Err(Error::Format(format!("beam combination index {rank} out of range")));
    }
    let mut out = vec![0; k];
    let mut hi = n;
    for i in (0..k).rev() {
        let mut c = hi - 1;
        while binomial(c as u64, i as u64 + 1) > rank {
            c -= 1;
        }
        out[i] = c;
        rank -= binomial(c as u64, i as u64 + 1);
        hi = c;
    }
    Ok(out)
}

/// Beam `local` (`a·n2 + b`) of rotation `rot` (`r1·o2 + r2`).
fn grid_beam(grid: &DftGrid, rot: usize, local: usize) -> Vec<C64> {
    let (r1, r2) = (rot / grid.o2, rot % grid.o2);
    let (a, b) = (local / grid.n2, local % grid.n2);
    dft_beam(grid.n1, grid.n2, grid.o1, grid.o2, r1 + grid.o1 * a, r2 + grid.o2 * b).expect("index inside grid")
}

fn check_input(sb: &SubbandChannel, cfg: &Type2Config) -> Result<()> {
    cfg.validate()?;
    if sb.nt != cfg.nt() {
        return Err(Error::InvalidArgument(format!(
            "channel has {} ports, codebook expects {} (dual polarization)",
            sb.nt,
            cfg.nt()
        )));
    }
    if sb.subbands() != cfg.subbands {
        return Err(Error::InvalidArgument(format!(
            "channel has {} subbands, config expects {}",
            sb.subbands(),
            cfg.subbands
        )));
    }
    Ok(())
}

/// Picks the rotation and `L` beams capturing the most projected power over
/// all subbands and both polarizations; ties go to the lowest index.
fn select_beams(sb: &SubbandChannel, cfg: &Type2Config) -> (usize, Vec<usize>) {
    let grid = &cfg.grid;
    let half = grid.ports_per_pol();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for rot in 0..grid.o1 * grid.o2 {
        let mut power: Vec<(f64, usize)> = (0..half)
            .map(|l| {
                let beam = grid_beam(grid, rot, l);
                let p = (0..sb.subbands())
                    .map(|s| {
                        let v = sb.primary(s);
                        inner(&beam, &v[..half]).norm_sqr() + inner(&beam, &v[half..]).norm_sqr()
                    })
                    .sum::<f64>();
                (p, l)
            })
            .collect();
        power.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let total: f64 = power[..cfg.beams].iter().map(|p| p.0).sum();
        if best.as_ref().is_none_or(|b| total > b.0) {
            let mut chosen: Vec<usize> = power[..cfg.beams].iter().map(|p| p.1).collect();
            chosen.sort_unstable();
            best = Some((total, rot, chosen));
        }
    }
    let (_, rot, chosen) = best.expect("at least one rotation");
    (rot, chosen)
}

pub fn type2_encode(sb: &SubbandChannel, cfg: &Type2Config) -> Result<FeedbackMessage> {
    check_input(sb, cfg)?;
    let half = cfg.grid.ports_per_pol();
    let (rot, chosen) = select_beams(sb, cfg);
    let beams: Vec<Vec<C64>> = chosen.iter().map(|&l| grid_beam(&cfg.grid, rot, l)).collect();
    let amp_levels = 1u64 << cfg.amplitude_bits;
    let phase_levels = 1u64 << cfg.phase_bits;

    let mut w = BitWriter::new();
    w.push(rot as u64, cfg.rotation_bits());
    w.push(rank_subset(&chosen), cfg.combination_bits());
    for s in 0..sb.subbands() {
        let v = sb.primary(s);
        let coeffs: Vec<C64> = [&v[..half], &v[half..]]
            .iter()
            .flat_map(|pol| beams.iter().map(move |b| inner(b, pol)))
            .collect();
        let (strongest, peak) = coeffs
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, c)| if c.norm() > best.1 { (i, c.norm()) } else { best });
        w.push(strongest as u64, cfg.position_bits());
        for (i, c) in coeffs.iter().enumerate() {
            if i == strongest {
                continue;
            }
            let (amp, phase) = if peak > 0.0 {
                let r = c / coeffs[strongest];
                let a = (r.norm() * amp_levels as f64).round().min((amp_levels - 1) as f64) as u64;
                let p = (r.arg() / (2.0 * PI) * phase_levels as f64).round() as i64;
                (a, p.rem_euclid(phase_levels as i64) as u64)
            } else {
                (0, 0)
            };
            w.push(amp, cfg.amplitude_bits);
            w.push(phase, cfg.phase_bits);
        }
    }
    let msg = FeedbackMessage::from_writer(SchemeTag::Type2, config_hash(cfg), w);
    assert_eq!(msg.bit_len, cfg.bits_per_report(), "Type II payload length diverged from overhead formula");
    Ok(msg)
}

/// Rebuilds one unit vector per subband on `partition`.
pub fn type2_decode(
    msg: &FeedbackMessage,
    cfg: &Type2Config,
    partition: &[(usize, usize)],
) -> Result<ReconstructedCsi> {
    cfg.validate()?;
    msg.expect(SchemeTag::Type2, config_hash(cfg), cfg.bits_per_report())?;
    if partition.len() != cfg.subbands {
        return Err(Error::InvalidArgument("partition does not match subband count".into()));
    }
    let half = cfg.grid.ports_per_pol();
    let mut r = msg.reader();
    let rot = r.read(cfg.rotation_bits())? as usize;
    if rot >= cfg.grid.o1 * cfg.grid.o2 {
        return Err(Error::Format(format!("rotation index {rot} out of range")));
    }
    let chosen = unrank_subset(r.read(cfg.combination_bits())?, half, cfg.beams)?;
    let beams: Vec<Vec<C64>> = chosen.iter().map(|&l| grid_beam(&cfg.grid, rot, l)).collect();
    let amp_step = 1.0 / (1u64 << cfg.amplitude_bits) as f64;
    let phase_step = 2.0 * PI / (1u64 << cfg.phase_bits) as f64;
    let n_coeff = 2 * cfg.beams;

    let mut vectors = Vec::with_capacity(cfg.subbands);
    for _ in 0..cfg.subbands {
        let strongest = r.read(cfg.position_bits())? as usize;
        if strongest >= n_coeff {
            return Err(Error::Format(format!("strongest position {strongest} out of range")));
        }
        let mut coeffs = vec![C64::new(1.0, 0.0); n_coeff];
        for (i, c) in coeffs.iter_mut().enumerate() {
            if i == strongest {
                continue;
            }
            let a = r.read(cfg.amplitude_bits)? as f64 * amp_step;
            let p = r.read(cfg.phase_bits)? as f64 * phase_step;
            *c = C64::from_polar(a, p);
        }
        let mut v = vec![C64::new(0.0, 0.0); 2 * half];
        for (pol, chunk) in v.chunks_mut(half).enumerate() {
            for (l, beam) in beams.iter().enumerate() {
                let c = coeffs[pol * cfg.beams + l];
                for (o, b) in chunk.iter_mut().zip(beam) {
                    *o += b * c;
                }
            }
        }
        vectors.push(v);
    }
    ReconstructedCsi::new(partition.to_vec(), vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinadic_round_trip() {
        for n in 1..=8 {
            for k in 1..=n {
                for rank in 0..binomial(n as u64, k as u64) {
                    let s = unrank_subset(rank, n, k).unwrap();
                    assert!(s.windows(2).all(|w| w[0] < w[1]));
                    assert_eq!(rank_subset(&s), rank);
                }
            }
        }
        assert!(unrank_subset(120, 16, 2).is_err());
    }

    #[test]
    fn bit_formula_values() {
        let cfg = Type2Config::from_codewords(18, 4, 3, 3).unwrap();
        assert_eq!(cfg.bits_per_report(), 4 + 7 + 18 * (2 + 3 * 6));
        let cfg = Type2Config::from_codewords(108, 6, 4, 3).unwrap();
        assert_eq!(cfg.bits_per_report(), 4 + 10 + 108 * (3 + 5 * 7));
        assert!(Type2Config::from_codewords(18, 1, 3, 3).is_err());
    }
}
