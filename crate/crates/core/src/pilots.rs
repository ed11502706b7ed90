//! CSI-RS patterns, noisy pilot observation, least-squares estimation and
//! subband eigen-channels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelTensor;
use crate::error::{Error, Result};
use crate::numerics::{fix_phase, gaussian_draw, normalize_unit, ComplexMatrix, SeededRng, C64};

pub const SUBCARRIERS_PER_RB: usize = 12;
pub const MAX_PORTS: usize = 32;
pub const MAX_DENSITY_PERIOD: u32 = 128;

/// Pilot density of one RE per port every `period` resource blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Density(u32);

impl Density {
    pub const FULL: Density = Density(1);

    /// `period` must be a power of two in `1..=128`.
    pub fn from_period(period: u32) -> Result<Self> {
        if period == 0 || period > MAX_DENSITY_PERIOD || !period.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "density 1/{period} not in {{1, 1/2, ..., 1/128}}"
            )));
        }
        Ok(Density(period))
    }

    pub fn period(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        1.0 / self.0 as f64
    }

    /// Pilot count per port: `floor(rb_count × density)`.
    pub fn locations(self, rb_count: usize) -> usize {
        rb_count / self.0 as usize
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 1 {
            write!(f, "1")
        } else {
            write!(f, "1/{}", self.0)
        }
    }
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let period = match s.split_once('/') {
            Some((num, den)) if num.trim() == "1" => den.trim().parse::<u32>().ok(),
            Some(_) => None,
            None if s == "1" => Some(1),
            None => None,
        };
        period
            .ok_or_else(|| Error::InvalidArgument(format!("cannot parse density `{s}`")))
            .and_then(Density::from_period)
    }
}

impl Serialize for Density {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pilot subcarriers shared by all ports; port orthogonality is carried by
/// the diagonal pilot-signal model rather than by distinct positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotPattern {
    pub density: Density,
    pub ports: usize,
    pub rb_count: usize,
    pub positions: Vec<usize>,
    pub amplitude: f64,
}

impl PilotPattern {
    pub fn subcarriers(&self) -> usize {
        self.rb_count * SUBCARRIERS_PER_RB
    }
}

/// Pilots at subcarrier 0 of RB `j·period` for `j < floor(rb_count / period)`.
pub fn build_pattern(density: Density, ports: usize, rb_count: usize) -> Result<PilotPattern> {
    if ports == 0 || ports > MAX_PORTS {
        return Err(Error::InvalidArgument(format!("port count {ports} outside 1..={MAX_PORTS}")));
    }
    let n = density.locations(rb_count);
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "no pilot fits: density {density} over {rb_count} RBs"
        )));
    }
    let step = density.period() as usize * SUBCARRIERS_PER_RB;
    Ok(PilotPattern {
        density,
        ports,
        rb_count,
        positions: (0..n).map(|j| j * step).collect(),
        amplitude: 1.0,
    })
}

/// Received pilots indexed `(pilot, rx, port)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservations {
    pub pattern: PilotPattern,
    pub k: usize,
    pub nr: usize,
    pub values: Vec<C64>,
}

/// `y = h·a + n` with `n ~ CN(0, a²·10^(−snr/10))`. `snr_db = +∞` disables noise.
pub fn observe_pilots(
    h: &ChannelTensor,
    pattern: &PilotPattern,
    snr_db: f64,
    rng: &mut SeededRng,
) -> Result<PilotObservations> {
    if pattern.ports != h.nt() {
        return Err(Error::InvalidArgument(format!(
            "pattern has {} ports, channel has {}",
            pattern.ports,
            h.nt()
        )));
    }
    if pattern.positions.last().is_some_and(|&p| p >= h.k()) {
        return Err(Error::InvalidArgument("pilot position beyond channel bandwidth".into()));
    }
    let a = pattern.amplitude;
    let mut values = Vec::with_capacity(pattern.positions.len() * h.nr() * h.nt());
    for &pos in &pattern.positions {
        for r in 0..h.nr() {
            values.extend(h.row(pos, r).iter().map(|v| v * a));
        }
    }
    if snr_db.is_finite() {
        let var = a * a * 10f64.powf(-snr_db / 10.0);
        let noise = gaussian_draw(rng, values.len(), var);
        values.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    } else if snr_db < 0.0 {
        return Err(Error::InvalidArgument("snr_db = -inf".into()));
    }
    Ok(PilotObservations {
        pattern: pattern.clone(),
        k: h.k(),
        nr: h.nr(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    ZeroOrder,
    #[default]
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub channel: ChannelTensor,
    pub mode: Interpolation,
    pub pattern: PilotPattern,
}

/// Expands per-location rows (`nr·nt` values each) to all `k` subcarriers.
///
/// Zero order holds the nearest pilot on the left; first order interpolates
/// real and imaginary parts linearly. Both hold the outermost pilots beyond the edges.
pub fn interpolate(
    positions: &[usize],
    rows: &[C64],
    k: usize,
    nr: usize,
    nt: usize,
    mode: Interpolation,
) -> Result<ChannelTensor> {
    let width = nr * nt;
    if positions.is_empty() || rows.len() != positions.len() * width {
        return Err(Error::InvalidArgument("interpolation needs one row per pilot".into()));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) || positions[positions.len() - 1] >= k {
        return Err(Error::InvalidArgument("pilot positions must increase inside 0..k".into()));
    }
    let row = |i: usize| &rows[i * width..(i + 1) * width];
    let mut out = ChannelTensor::zeros(k, nr, nt);
    let mut seg = 0;
    for f in 0..k {
        while seg + 1 < positions.len() && positions[seg + 1] <= f {
            seg += 1;
        }
        let dst = &mut out.data_mut()[f * width..(f + 1) * width];
        let left = positions[seg];
        if f <= left || seg + 1 == positions.len() || mode == Interpolation::ZeroOrder {
            let src = if f < left { row(0) } else { row(seg) };
            dst.copy_from_slice(src);
        } else {
            let right = positions[seg + 1];
            let t = (f - left) as f64 / (right - left) as f64;
            for ((d, a), b) in dst.iter_mut().zip(row(seg)).zip(row(seg + 1)) {
                *d = a * (1.0 - t) + b * t;
            }
        }
    }
    Ok(out)
}

/// LS estimate at the pilots followed by interpolation.
pub fn estimate(obs: &PilotObservations, mode: Interpolation) -> Result<ChannelEstimate> {
    let nt = obs.pattern.ports;
    let inv = 1.0 / obs.pattern.amplitude;
    let ls: Vec<C64> = obs.values.iter().map(|v| v * inv).collect();
    let channel = interpolate(&obs.pattern.positions, &ls, obs.k, obs.nr, nt, mode)?;
    Ok(ChannelEstimate {
        channel,
        mode,
        pattern: obs.pattern.clone(),
    })
}

/// Top-`n` right singular directions of the stacked rows `a` (n_rows × nt).
///
/// Equivalent to the top eigenvectors of `aᴴa`. With fewer rows than columns
/// the smaller Gram `aaᴴ` is decomposed instead and mapped back through `aᴴ`.
pub fn eigen_directions(a: &ComplexMatrix, n: usize) -> Result<Vec<Vec<C64>>> {
    let (rows, cols) = a.shape();
    if rows < cols && n <= rows {
        let ah = a.conj_transpose();
        let small = a.matmul(&ah)?;
        let eig = small.hermitian_eig(n)?;
        let floor = 1e-12 * eig.values[0].abs().max(f64::MIN_POSITIVE);
        if eig.values.iter().all(|&l| l > floor) {
            return (0..n)
                .map(|j| {
                    let u = ComplexMatrix::column_vector(&eig.vectors.column(j));
                    let mut v = ah.matmul(&u)?.column(0);
                    normalize_unit(&mut v);
                    fix_phase(&mut v);
                    Ok(v)
                })
                .collect();
        }
    }
    let gram = a.conj_transpose().matmul(a)?;
    let eig = gram.hermitian_eig(n)?;
    Ok((0..n).map(|j| eig.vectors.column(j)).collect())
}

/// Per-subband top eigenvectors of `Σ ĥᴴĥ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandChannel {
    pub nt: usize,
    pub nr_prime: usize,
    /// Half-open subcarrier ranges.
    pub partition: Vec<(usize, usize)>,
    /// Per subband, `nr_prime` unit vectors of length `nt`.
    pub vectors: Vec<Vec<Vec<C64>>>,
}

impl SubbandChannel {
    pub fn subbands(&self) -> usize {
        self.partition.len()
    }

    /// Dominant direction of subband `s`.
    pub fn primary(&self, s: usize) -> &[C64] {
        &self.vectors[s][0]
    }

    /// Builds a rank-1 stack from given vectors (normalized and phase-fixed).
    pub fn from_primary(partition: Vec<(usize, usize)>, vectors: Vec<Vec<C64>>) -> Result<Self> {
        let nt = vectors.first().map_or(0, Vec::len);
        if partition.len() != vectors.len() || vectors.iter().any(|v| v.len() != nt) {
            return Err(Error::InvalidArgument("one vector of equal length per subband".into()));
        }
        let vectors = vectors
            .into_iter()
            .map(|mut v| {
                normalize_unit(&mut v);
                fix_phase(&mut v);
                vec![v]
            })
            .collect();
        Ok(Self {
            nt,
            nr_prime: 1,
            partition,
            vectors,
        })
    }
}

/// Subbands of `size_rb` resource blocks; the last one may be shorter.
pub fn subband_partition(k: usize, size_rb: usize) -> Result<Vec<(usize, usize)>> {
    if size_rb == 0 {
        return Err(Error::InvalidArgument("subband size must be >= 1 RB".into()));
    }
    let width = size_rb * SUBCARRIERS_PER_RB;
    Ok((0..k).step_by(width).map(|s| (s, (s + width).min(k))).collect())
}

pub fn subband_eigen(est: &ChannelTensor, subband_size_rb: usize, nr_prime: usize) -> Result<SubbandChannel> {
    if nr_prime == 0 || nr_prime > est.nr().min(est.nt()) {
        return Err(Error::InvalidArgument(format!(
            "nr_prime {nr_prime} outside 1..={}",
            est.nr().min(est.nt())
        )));
    }
    let partition = subband_partition(est.k(), subband_size_rb)?;
    let nt = est.nt();
    let vectors = partition
        .iter()
        .map(|&(lo, hi)| {
            let rows = (hi - lo) * est.nr();
            let a = ComplexMatrix::new(rows, nt, est.data()[lo * est.nr() * nt..hi * est.nr() * nt].to_vec())?;
            eigen_directions(&a, nr_prime)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubbandChannel {
        nt,
        nr_prime,
        partition,
        vectors,
    })
}
