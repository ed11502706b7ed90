//! Multi-user zero-forcing precoding, downlink SE, and the sweep harness.

mod flops;
mod results;
mod scheme;
mod sweep;

pub use flops::{eigen_flops, gflops, SchemeFlops};
pub use results::{read_results_csv, write_jsonl, write_results_csv, PointOutcome, ResultRow, CSV_FIXED_COLUMNS};
pub use scheme::{
    align_phase, eigen_channel_stack, per_rb_truth, training_pairs, ue_estimate, LoadedModel, OperatingPoint, PreparedScheme, SchemeSpec, TrainingPairs,
};
pub use sweep::{run_operating_point, sweep, user_groups, SweepOutput, EVAL_STREAM};

use serde::{Deserialize, Serialize};

use crate::channel::{ArrayGeometry, ChannelConfig, ChannelTensor};
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, C64};
use crate::pilots::{Interpolation, SUBCARRIERS_PER_RB};

/// `HHᴴ` condition numbers above this drop the sample.
pub const ZF_CONDITION_LIMIT: f64 = 1e10;
/// Rows with more dropped groups than this fraction are flagged invalid.
pub const MAX_DROP_FRACTION: f64 = 0.01;

/// Link parameters shared by every operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub rb_count: usize,
    pub geometry: ArrayGeometry,
    pub nr: usize,
    /// Co-scheduled UEs per ZF group.
    pub users: usize,
    pub snr_db: f64,
    /// Feedback report period in seconds.
    pub period_s: f64,
    /// Hz.
    pub subcarrier_spacing: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            rb_count: 16,
            geometry: ArrayGeometry::default(),
            nr: 1,
            users: 4,
            snr_db: 25.0,
            period_s: 5e-3,
            subcarrier_spacing: 30e3,
            interpolation: Interpolation::FirstOrder,
        }
    }
}

impl SystemConfig {
    pub fn k(&self) -> usize {
        self.rb_count * SUBCARRIERS_PER_RB
    }

    pub fn nt(&self) -> usize {
        self.geometry.nt()
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            geometry: self.geometry,
            nr: self.nr,
            k: self.k(),
            subcarrier_spacing: self.subcarrier_spacing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel_config().validate()?;
        if self.rb_count == 0 {
            return Err(Error::config("system.rb_count", "must be >= 1"));
        }
        if self.nr != 1 {
            return Err(Error::config("system.nr", "only single-port UEs (nr = 1) are supported"));
        }
        if self.users == 0 || self.users > self.nt() {
            return Err(Error::config("system.users", format!("must be in 1..={}", self.nt())));
        }
        if !self.snr_db.is_finite() || !(-20.0..=60.0).contains(&self.snr_db) {
            return Err(Error::config("system.snr_db", "must be in -20..=60"));
        }
        if !(self.period_s > 0.0 && self.period_s <= 1.0) {
            return Err(Error::config("system.period_s", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Stacks one channel row per UE (row `m` = UE `m`).
pub fn stack_channels(rows: &[&[C64]]) -> Result<ComplexMatrix> {
    let nt = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != nt) {
        return Err(Error::InvalidArgument("every UE must report a row of the same length".into()));
    }
    ComplexMatrix::new(rows.len(), nt, rows.concat())
}

/// `P = Hᴴ(HHᴴ)⁻¹`, scaled by one scalar so that `trace(PᴴP) = 1`.
/// Returns the precoder and the applied scale.
pub fn zf_precoder(h: &ComplexMatrix) -> Result<(ComplexMatrix, f64)> {
    let (m, nt) = h.shape();
    if m > nt {
        return Err(Error::InvalidArgument(format!("{m} users exceed {nt} antennas")));
    }
    let hh = h.conj_transpose();
    let gram = h.matmul(&hh)?;
    let inv = gram.inverse()?;
    let condition = gram.norm_1() * inv.norm_1();
    if !(condition <= ZF_CONDITION_LIMIT) {
        return Err(Error::IllConditioned { condition });
    }
    let p = hh.matmul(&inv)?;
    let norm = p.frobenius_norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Singular { pivot: 0.0 });
    }
    let scale = 1.0 / norm;
    Ok((p.scaled(C64::new(scale, 0.0)), scale))
}

/// One precoder per frequency unit of `partition`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub partition: Vec<(usize, usize)>,
    /// `Nt × M` each.
    pub matrices: Vec<ComplexMatrix>,
    /// Scalar applied after inversion to meet the power constraint.
    pub scales: Vec<f64>,
}

impl PrecoderSet {
    pub fn unit_of(&self, f: usize) -> usize {
        self.partition.partition_point(|&(_, hi)| hi <= f)
    }
}

/// Per-UE SE (mean over subcarriers of `log2(1+SINR)`) against the true
/// channels; the sum is the exact sum of the per-UE values.
pub fn sum_se(channels: &[&ChannelTensor], precoders: &PrecoderSet, snr_db: f64) -> Result<(f64, Vec<f64>)> {
    let m = channels.len();
    let k = channels.first().map_or(0, |h| h.k());
    if channels.iter().any(|h| h.k() != k || h.nr() != 1) {
        return Err(Error::InvalidArgument("channels must share K and have one rx port".into()));
    }
    if precoders.partition.last().map(|p| p.1) != Some(k) || precoders.matrices.len() != precoders.partition.len() {
        return Err(Error::InvalidArgument("precoder partition does not cover the band".into()));
    }
    if precoders.matrices.iter().any(|p| p.cols() != m || p.rows() != channels[0].nt()) {
        return Err(Error::InvalidArgument("precoder shape does not match users × antennas".into()));
    }
    let rho = 10f64.powf(snr_db / 10.0);
    let mut per_ue = vec![0.0; m];
    let mut gains = vec![0.0; m];
    for f in 0..k {
        let p = &precoders.matrices[precoders.unit_of(f)];
        for (u, h) in channels.iter().enumerate() {
            let row = h.row(f, 0);
            for (j, g) in gains.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (t, x) in row.iter().enumerate() {
                    acc += x * p.get(t, j);
                }
                *g = acc.norm_sqr();
            }
            let interference: f64 = gains.iter().enumerate().filter(|&(j, _)| j != u).map(|(_, g)| g).sum();
            let sinr = rho * gains[u] / (rho * interference + 1.0);
            per_ue[u] += (1.0 + sinr).log2();
        }
    }
    per_ue.iter_mut().for_each(|s| *s /= k as f64);
    Ok((per_ue.iter().sum(), per_ue))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_user_zf_is_matched_filter() {
        let h = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 3.0)];
        let (p, _) = zf_precoder(&stack_channels(&[&h]).unwrap()).unwrap();
        let norm = h.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        for (t, x) in h.iter().enumerate() {
            assert!((p.get(t, 0) - x.conj() / norm).norm() < 1e-14);
        }
    }

    #[test]
    fn duplicate_users_are_rejected() {
        let h = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        assert!(zf_precoder(&stack_channels(&[&h, &h]).unwrap()).is_err());
    }

    #[test]
    fn flat_single_user_rate() {
        let mut ch = ChannelTensor::zeros(12, 1, 2);
        for f in 0..12 {
            ch.row_mut(f, 0).copy_from_slice(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        }
        let (p, s) = zf_precoder(&stack_channels(&[ch.row(0, 0)]).unwrap()).unwrap();
        let set = PrecoderSet {
            partition: vec![(0, 12)],
            matrices: vec![p],
            scales: vec![s],
        };
        let (se, per) = sum_se(&[&ch], &set, 25.0).unwrap();
        assert!((se - (1.0 + 10f64.powf(2.5)).log2()).abs() < 1e-12);
        assert_eq!(per, vec![se]);
    }
}
