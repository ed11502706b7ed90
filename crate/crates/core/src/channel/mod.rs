//! Frequency-domain MIMO channels from a one-ray-per-cluster delay-line model.

mod io;
mod profile;

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hash::{config_hash, to_hex};
use crate::numerics::{derive_seed, SeededRng, C64};

pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use profile::{Cluster, ClusterProfile, ProfileId};

/// Short, nominal and long RMS delay spreads (seconds).
pub const DEFAULT_DELAY_SPREADS: [f64; 3] = [30e-9, 100e-9, 300e-9];

/// Uniform planar array. Port index is `pol·n_h·n_v + p·n_v + q` for
/// horizontal element `p` and vertical element `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_h: usize,
    pub n_v: usize,
    pub n_pol: usize,
    /// Element spacing in wavelengths, horizontal then vertical.
    pub spacing_h: f64,
    pub spacing_v: f64,
}

impl ArrayGeometry {
    pub fn new(n_h: usize, n_v: usize, n_pol: usize, spacing: f64) -> Result<Self> {
        let g = Self {
            n_h,
            n_v,
            n_pol,
            spacing_h: spacing,
            spacing_v: spacing,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_h == 0 || self.n_v == 0 {
            return Err(Error::config("geometry", "array needs at least one element per axis"));
        }
        if !(1..=2).contains(&self.n_pol) {
            return Err(Error::config("geometry.n_pol", "must be 1 or 2"));
        }
        if !(self.spacing_h > 0.0 && self.spacing_v > 0.0) {
            return Err(Error::config("geometry.spacing", "must be positive"));
        }
        Ok(())
    }

    /// Ports per polarization.
    pub fn n_panel(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn nt(&self) -> usize {
        self.n_h * self.n_v * self.n_pol
    }
}

impl Default for ArrayGeometry {
    /// 4 × 4 dual-polarized, half-wavelength spacing (32 ports).
    fn default() -> Self {
        Self {
            n_h: 4,
            n_v: 4,
            n_pol: 2,
            spacing_h: 0.5,
            spacing_v: 0.5,
        }
    }
}

/// Steering vector towards (`azimuth`, `zenith`), zenith measured from the array's vertical axis.
///
/// Element `(p, q)` carries phase `2π(d_h·p·sinθ·sinφ + d_v·q·cosθ)`; both
/// polarizations get the same copy.
pub fn array_response(geometry: &ArrayGeometry, azimuth: f64, zenith: f64) -> Vec<C64> {
    let u = geometry.spacing_h * zenith.sin() * azimuth.sin();
    let v = geometry.spacing_v * zenith.cos();
    let mut panel = Vec::with_capacity(geometry.n_panel());
    for p in 0..geometry.n_h {
        for q in 0..geometry.n_v {
            panel.push(C64::from_polar(1.0, 2.0 * PI * (u * p as f64 + v * q as f64)));
        }
    }
    panel.repeat(geometry.n_pol)
}

/// Complex gains indexed `(subcarrier, rx, tx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    k: usize,
    nr: usize,
    nt: usize,
    data: Vec<C64>,
}

impl ChannelTensor {
    pub fn new(k: usize, nr: usize, nt: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != k * nr * nt {
            return Err(Error::InvalidArgument(format!(
                "channel {k}x{nr}x{nt} needs {} entries, got {}",
                k * nr * nt,
                data.len()
            )));
        }
        Ok(Self { k, nr, nt, data })
    }

    pub fn zeros(k: usize, nr: usize, nt: usize) -> Self {
        Self {
            k,
            nr,
            nt,
            data: vec![C64::new(0.0, 0.0); k * nr * nt],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.k, self.nr, self.nt)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, k: usize, r: usize, t: usize) -> C64 {
        self.data[(k * self.nr + r) * self.nt + t]
    }

    #[inline]
    pub fn set(&mut self, k: usize, r: usize, t: usize, v: C64) {
        self.data[(k * self.nr + r) * self.nt + t] = v;
    }

    /// The `1 × nt` row seen by rx port `r` on subcarrier `k`.
    pub fn row(&self, k: usize, r: usize) -> &[C64] {
        let start = (k * self.nr + r) * self.nt;
        &self.data[start..start + self.nt]
    }

    pub fn row_mut(&mut self, k: usize, r: usize) -> &mut [C64] {
        let start = (k * self.nr + r) * self.nt;
        &mut self.data[start..start + self.nt]
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Scales to unit mean power. An all-zero tensor is left unchanged.
    pub fn normalize(&mut self) {
        let p = self.mean_power();
        if p > 0.0 {
            let s = 1.0 / p.sqrt();
            self.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Everything about the link that a channel draw needs besides the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub geometry: ArrayGeometry,
    pub nr: usize,
    pub k: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.nr == 0 {
            return Err(Error::config("system.nr", "must be >= 1"));
        }
        if self.k == 0 {
            return Err(Error::config("system.k", "must be >= 1"));
        }
        if !(self.subcarrier_spacing > 0.0) {
            return Err(Error::config("system.subcarrier_spacing", "must be positive"));
        }
        Ok(())
    }
}

/// Per-cluster complex gains of one channel draw, indexed `(rx, cluster, pol)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRealization {
    pub nr: usize,
    pub n_clusters: usize,
    pub n_pol: usize,
    pub gains: Vec<C64>,
}

impl ClusterRealization {
    #[inline]
    pub fn gain(&self, r: usize, c: usize, pol: usize) -> C64 {
        self.gains[(r * self.n_clusters + c) * self.n_pol + pol]
    }
}

/// Draws gains: `g ~ CN(0, power_c)` per rx port and cluster; the second
/// polarization reuses `g` with an independent uniform phase.
pub fn draw_realization(profile: &ClusterProfile, n_pol: usize, nr: usize, rng: &mut SeededRng) -> ClusterRealization {
    let n_clusters = profile.clusters().len();
    let mut gains = Vec::with_capacity(nr * n_clusters * n_pol);
    for _ in 0..nr {
        for c in profile.clusters() {
            let g = rng.complex_gaussian(c.power);
            gains.push(g);
            for _ in 1..n_pol {
                let phase = rng.random::<f64>() * 2.0 * PI;
                gains.push(g * C64::from_polar(1.0, phase));
            }
        }
    }
    ClusterRealization {
        nr,
        n_clusters,
        n_pol,
        gains,
    }
}

/// Correlation between gains `dt` seconds apart at maximum Doppler `f_d`.
pub fn temporal_correlation(doppler_hz: f64, dt: f64) -> f64 {
    (-(doppler_hz * dt).powi(2)).exp()
}

/// Advances a realization by one period: `g' = ρ·g + √(1−ρ²)·w` with a fresh
/// draw `w` of the same per-cluster statistics.
pub fn evolve(
    realization: &ClusterRealization,
    profile: &ClusterProfile,
    rho: f64,
    rng: &mut SeededRng,
) -> ClusterRealization {
    let fresh = draw_realization(profile, realization.n_pol, realization.nr, rng);
    let s = (1.0 - rho * rho).max(0.0).sqrt();
    ClusterRealization {
        gains: realization
            .gains
            .iter()
            .zip(&fresh.gains)
            .map(|(g, w)| g * rho + w * s)
            .collect(),
        ..fresh
    }
}

/// Frequency response of a realization, not normalized.
///
/// `H[f, r, t] = Σ_c g(r, c, pol(t)) · a_c[t] · exp(−j2π·f·Δf·τ_c)`.
pub fn synthesize(
    profile: &ClusterProfile,
    realization: &ClusterRealization,
    cfg: &ChannelConfig,
) -> Result<ChannelTensor> {
    let geometry = &cfg.geometry;
    if realization.n_clusters != profile.clusters().len()
        || realization.n_pol != geometry.n_pol
        || realization.nr != cfg.nr
    {
        return Err(Error::InvalidArgument("realization does not match profile/config".into()));
    }
    let nt = geometry.nt();
    let panel = geometry.n_panel();
    let steering: Vec<Vec<C64>> = profile
        .clusters()
        .iter()
        .map(|c| array_response(geometry, c.azimuth, c.zenith))
        .collect();
    let mut h = ChannelTensor::zeros(cfg.k, cfg.nr, nt);
    for (ci, a) in steering.iter().enumerate() {
        let tau = profile.delay_seconds(ci);
        let step = -2.0 * PI * cfg.subcarrier_spacing * tau;
        for r in 0..cfg.nr {
            let weighted: Vec<C64> = (0..nt)
                .map(|t| realization.gain(r, ci, t / panel) * a[t])
                .collect();
            for f in 0..cfg.k {
                let rot = C64::from_polar(1.0, step * f as f64);
                for (o, w) in h.row_mut(f, r).iter_mut().zip(&weighted) {
                    *o += w * rot;
                }
            }
        }
    }
    Ok(h)
}

/// One normalized channel draw.
pub fn generate_channel(profile: &ClusterProfile, cfg: &ChannelConfig, rng: &mut SeededRng) -> Result<ChannelTensor> {
    let realization = draw_realization(profile, cfg.geometry.n_pol, cfg.nr, rng);
    let mut h = synthesize(profile, &realization, cfg)?;
    h.normalize();
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Which profile and delay spread produced a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub profile: String,
    pub rms_ds_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: Value,
    /// Hex of [`config_hash`] over `config`.
    pub config_hash: String,
    pub seed: u64,
    pub algorithm: String,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub labels: Vec<SampleLabel>,
}

impl Provenance {
    pub fn verify(&self) -> bool {
        to_hex(&config_hash(&self.config)) == self.config_hash
    }
}

/// Profile mixture and delay-spread set a dataset is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub mix: Vec<(ProfileId, f64)>,
    /// Seconds.
    pub delay_spreads: Vec<f64>,
}

impl Default for DatasetRecipe {
    /// CDL-A/B/C with equal weights, delay spreads 30/100/300 ns.
    fn default() -> Self {
        Self {
            mix: ProfileId::ALL.iter().map(|&p| (p, 1.0)).collect(),
            delay_spreads: DEFAULT_DELAY_SPREADS.to_vec(),
        }
    }
}

impl DatasetRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.mix.is_empty() {
            return Err(Error::config("dataset.mix", "profile mix is empty"));
        }
        if self.mix.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::config("dataset.mix", "weights must be positive"));
        }
        if self.delay_spreads.is_empty() || self.delay_spreads.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::config("dataset.delay_spreads", "need at least one non-negative value"));
        }
        Ok(())
    }
}

/// Channel samples sharing one shape, with the record needed to regenerate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub nr: usize,
    pub nt: usize,
    pub samples: Vec<ChannelTensor>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Option<Split> {
        self.provenance.split
    }
}

/// Draws `n` independent samples. Sample `i` uses its own stream
/// `derive_seed(seed, i)`, so content does not depend on thread count.
pub fn make_dataset(
    recipe: &DatasetRecipe,
    n: usize,
    cfg: &ChannelConfig,
    seed: u64,
    split: Option<Split>,
) -> Result<Dataset> {
    recipe.validate()?;
    cfg.validate()?;
    let profiles = recipe
        .mix
        .iter()
        .map(|(id, _)| ClusterProfile::builtin(*id, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let weights = WeightedIndex::new(recipe.mix.iter().map(|(_, w)| *w))
        .map_err(|e| Error::config("dataset.mix", e.to_string()))?;

    let drawn: Vec<(ChannelTensor, SampleLabel)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::new(derive_seed(seed, i as u64));
            let p = weights.sample(&mut rng);
            let ds = recipe.delay_spreads[rng.random_range(0..recipe.delay_spreads.len())];
            let profile = profiles[p].with_delay_spread(ds);
            let h = generate_channel(&profile, cfg, &mut rng)?;
            let label = SampleLabel {
                profile: profile.name().to_string(),
                rms_ds_ns: ds * 1e9,
            };
            Ok((h, label))
        })
        .collect::<Result<_>>()?;

    let config = serde_json::json!({
        "channel": cfg,
        "recipe": recipe,
        "n": n,
        "split": split,
    });
    let provenance = Provenance {
        config_hash: to_hex(&config_hash(&config)),
        config,
        seed,
        algorithm: SeededRng::ALGORITHM.into(),
        split,
        labels: drawn.iter().map(|(_, l)| l.clone()).collect(),
    };
    Ok(Dataset {
        k: cfg.k,
        nr: cfg.nr,
        nt: cfg.geometry.nt(),
        samples: drawn.into_iter().map(|(h, _)| h).collect(),
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile(clusters: Vec<Cluster>) -> ClusterProfile {
        ClusterProfile::new("test", clusters, 1.0).unwrap()
    }

    fn boresight(delay: f64) -> Cluster {
        Cluster {
            delay,
            power: 1.0,
            azimuth: 0.0,
            zenith: PI / 2.0,
        }
    }

    fn small_cfg(k: usize) -> ChannelConfig {
        ChannelConfig {
            geometry: ArrayGeometry::default(),
            nr: 1,
            k,
            subcarrier_spacing: 30e3,
        }
    }

    #[test]
    fn boresight_response_is_flat_phase() {
        let a = array_response(&ArrayGeometry::default(), 0.0, PI / 2.0);
        assert_eq!(a.len(), 32);
        assert!(a.iter().all(|x| (x - C64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn endfire_azimuth_gives_pi_steps() {
        let g = ArrayGeometry::default();
        let a = array_response(&g, PI / 2.0, PI / 2.0);
        // horizontal neighbours are n_v ports apart
        let ratio = a[g.n_v] / a[0];
        assert!((ratio - C64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!(a.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_delay_cluster_is_frequency_flat() {
        let p = flat_profile(vec![boresight(0.0)]);
        let h = generate_channel(&p, &small_cfg(24), &mut SeededRng::new(1)).unwrap();
        for f in 1..24 {
            assert_eq!(h.row(f, 0), h.row(0, 0));
        }
        assert!((h.mean_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_path_nulls_follow_delay() {
        let tau = 1e-6;
        let spacing = 30e3;
        let p = ClusterProfile::new("two", vec![boresight(0.0), boresight(1.0)], tau).unwrap();
        let cfg = ChannelConfig {
            geometry: ArrayGeometry::new(1, 1, 1, 0.5).unwrap(),
            nr: 1,
            k: 200,
            subcarrier_spacing: spacing,
        };
        let real = ClusterRealization {
            nr: 1,
            n_clusters: 2,
            n_pol: 1,
            gains: vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
        };
        let h = synthesize(&p, &real, &cfg).unwrap();
        // |1 + e^{-j2πfΔfτ}|² = 2 + 2cos(2πfΔfτ), nulls every 1/(Δfτ) subcarriers.
        for f in 0..200 {
            let expected = 2.0 + 2.0 * (2.0 * PI * f as f64 * spacing * tau).cos();
            assert!((h.get(f, 0, 0).norm_sqr() - expected).abs() < 1e-9);
        }
        let period = 1.0 / (spacing * tau);
        let null = (period / 2.0).round() as usize;
        assert!(h.get(null, 0, 0).norm_sqr() < 0.02);
        assert!(h.get(null + period.round() as usize, 0, 0).norm_sqr() < 0.05);
    }

    #[test]
    fn evolve_limits() {
        let p = ClusterProfile::builtin(ProfileId::CdlA, 1e-7).unwrap();
        let mut rng = SeededRng::new(3);
        let r = draw_realization(&p, 2, 1, &mut rng);
        assert_eq!(evolve(&r, &p, 1.0, &mut rng).gains, r.gains);
        assert!((temporal_correlation(11.0, 5e-3) - (-(0.055f64).powi(2)).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_and_empty_mix() {
        let d = make_dataset(&DatasetRecipe::default(), 0, &small_cfg(12), 5, None).unwrap();
        assert!(d.is_empty());
        let bad = DatasetRecipe {
            mix: vec![],
            ..DatasetRecipe::default()
        };
        assert!(make_dataset(&bad, 3, &small_cfg(12), 5, None).is_err());
    }

    #[test]
    fn dataset_is_deterministic_and_provenance_checks() {
        let a = make_dataset(&DatasetRecipe::default(), 6, &small_cfg(12), 9, Some(Split::Val)).unwrap();
        let b = make_dataset(&DatasetRecipe::default(), 6, &small_cfg(12), 9, Some(Split::Val)).unwrap();
        assert_eq!(a, b);
        assert!(a.provenance.verify());
        assert_eq!(a.provenance.labels.len(), 6);
    }
}
