//! Operating-point evaluation and grid sweeps.
//!
//! Test sample `i` always draws its pilot noise from `derive_seed(eval_seed, i)`,
//! so every scheme sees the same channels and the same noise. ZF group `g`
//! serves samples `(g + m·N/M) mod N` for `m < M`.

use rayon::prelude::*;

use super::flops::gflops;
use super::results::{PointOutcome, ResultRow};
use super::scheme::{per_rb_truth, LoadedModel, OperatingPoint, PreparedScheme, SchemeSpec};
use super::{stack_channels, sum_se, zf_precoder, PrecoderSet, SystemConfig, MAX_DROP_FRACTION};
use crate::ai4csi::{direction_nmse_db, stack_csi};
use crate::channel::ChannelTensor;
use crate::error::{Error, Result};
use crate::legacy::{kbps, ReconstructedCsi};
use crate::numerics::{derive_seed, ComplexMatrix};

/// Stream index mixed into the master seed for evaluation noise.
pub const EVAL_STREAM: u64 = 0x00e7_a100;

pub fn user_groups(n: usize, users: usize) -> Result<Vec<Vec<usize>>> {
    if users == 0 || n < users {
        return Err(Error::InvalidArgument(format!("{n} test samples cannot form groups of {users} UEs")));
    }
    let stride = n / users;
    Ok((0..n).map(|g| (0..users).map(|m| (g + m * stride) % n).collect()).collect())
}

fn precoders(recs: &[&ReconstructedCsi]) -> Result<PrecoderSet> {
    let partition = recs[0].partition.clone();
    if recs.iter().any(|r| r.partition != partition) {
        return Err(Error::InvalidArgument("UEs reconstructed on different grids".into()));
    }
    let mut matrices = Vec::with_capacity(partition.len());
    let mut scales = Vec::with_capacity(partition.len());
    for u in 0..partition.len() {
        let rows: Vec<Vec<_>> = recs.iter().map(|r| r.vectors[u].iter().map(|x| x.conj()).collect()).collect();
        let refs: Vec<&[_]> = rows.iter().map(Vec::as_slice).collect();
        let (p, s): (ComplexMatrix, f64) = zf_precoder(&stack_channels(&refs)?)?;
        matrices.push(p);
        scales.push(s);
    }
    Ok(PrecoderSet {
        partition,
        matrices,
        scales,
    })
}

/// Evaluates one prepared scheme on the test channels.
pub fn run_operating_point(id: &str, scheme: &PreparedScheme, test: &[ChannelTensor], eval_seed: u64) -> Result<ResultRow> {
    let sys = &scheme.system;
    let groups = user_groups(test.len(), sys.users)?;
    let refs: Vec<&ChannelTensor> = test.iter().collect();
    let seeds: Vec<u64> = (0..test.len()).map(|i| derive_seed(eval_seed, i as u64)).collect();
    let recs = scheme.reconstruct_batch(&refs, &seeds)?;

    let per_group: Vec<Option<Vec<f64>>> = groups
        .par_iter()
        .map(|g| {
            let ues: Vec<&ReconstructedCsi> = g.iter().map(|&i| &recs[i]).collect();
            let set = match precoders(&ues) {
                Ok(set) => set,
                Err(Error::Singular { .. } | Error::IllConditioned { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let chans: Vec<&ChannelTensor> = g.iter().map(|&i| &test[i]).collect();
            Ok(Some(sum_se(&chans, &set, sys.snr_db)?.1))
        })
        .collect::<Result<_>>()?;

    let mut per_ue = vec![0.0; sys.users];
    let mut kept = 0usize;
    for se in per_group.iter().flatten() {
        per_ue.iter_mut().zip(se).for_each(|(a, b)| *a += b);
        kept += 1;
    }
    let dropped = groups.len() - kept;
    if kept == 0 {
        return Err(Error::Invariant(format!("{id}: every ZF group was dropped")));
    }
    per_ue.iter_mut().for_each(|s| *s /= kept as f64);

    let rb = scheme.spec.subbands(sys);
    let rb_partition = crate::pilots::subband_partition(sys.k(), 1)?;
    let truth: Vec<ReconstructedCsi> = test.par_iter().map(per_rb_truth).collect::<Result<_>>()?;
    let fine: Vec<ReconstructedCsi> = recs.iter().map(|r| r.regrid(&rb_partition)).collect();
    let nmse = direction_nmse_db(
        &stack_csi(&fine.iter().map(|r| r.vectors.as_slice()).collect::<Vec<_>>())?,
        &stack_csi(&truth.iter().map(|r| r.vectors.as_slice()).collect::<Vec<_>>())?,
    );

    let bits = scheme.spec.bits_per_report(sys)?;
    let flops = scheme.spec.flops(sys)?;
    Ok(ResultRow {
        scheme: id.to_string(),
        kind: scheme.spec.kind().to_string(),
        overhead_kbps: kbps(bits, sys.period_s),
        bits_per_report: bits,
        density: scheme.spec.density().to_string(),
        subbands: rb,
        se_sum: per_ue.iter().sum(),
        se_per_ue: per_ue,
        bs_gflops: gflops(flops.bs, sys.period_s),
        ue_gflops: gflops(flops.ue, sys.period_s),
        seed: eval_seed,
        n_samples: groups.len(),
        n_dropped: dropped,
        nmse_db: nmse,
        valid: dropped as f64 <= MAX_DROP_FRACTION * groups.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub outcomes: Vec<PointOutcome>,
    /// Reference row every other row is checked against.
    pub ideal: ResultRow,
}

impl SweepOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.outcomes.iter().filter_map(|o| o.row.clone()).collect()
    }
}

/// Evaluates every grid point; `load` supplies trained models for AI points.
/// A point that fails is recorded and the sweep continues. Any row beating
/// the ideal-CSI reference is a hard error.
pub fn sweep(
    points: &[OperatingPoint],
    system: &SystemConfig,
    test: &[ChannelTensor],
    master_seed: u64,
    load: impl Fn(&OperatingPoint) -> Result<LoadedModel>,
) -> Result<SweepOutput> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    system.validate()?;
    let eval_seed = derive_seed(master_seed, EVAL_STREAM);
    let ideal_scheme = PreparedScheme::new(SchemeSpec::Ideal, *system, LoadedModel::None)?;
    let ideal = run_operating_point("ideal", &ideal_scheme, test, eval_seed)?;

    let mut outcomes = Vec::with_capacity(points.len());
    for p in points {
        let result = if p.scheme == SchemeSpec::Ideal {
            Ok(ResultRow {
                scheme: p.id.clone(),
                ..ideal.clone()
            })
        } else {
            load(p)
                .and_then(|m| PreparedScheme::new(p.scheme.clone(), *system, m))
                .and_then(|s| run_operating_point(&p.id, &s, test, eval_seed))
        };
        outcomes.push(match result {
            Ok(row) => PointOutcome {
                id: p.id.clone(),
                row: Some(row),
                error: None,
            },
            Err(e) => PointOutcome {
                id: p.id.clone(),
                row: None,
                error: Some(e.to_string()),
            },
        });
    }
    for row in outcomes.iter().filter_map(|o| o.row.as_ref()) {
        if row.se_sum > ideal.se_sum {
            return Err(Error::Invariant(format!(
                "{} reaches {} bit/s/Hz, above the ideal-CSI bound {}",
                row.scheme, row.se_sum, ideal.se_sum
            )));
        }
    }
    Ok(SweepOutput { outcomes, ideal })
}
