//! Operating points: one feedback scheme with its parameters, and the
//! UE-to-BS pipeline that turns a channel sample into reconstructed CSI.

use csikit_neural::{count_flops_for, ModelGraph, Tensor4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flops::{beam_search_flops, eigen_flops, SchemeFlops};
use super::SystemConfig;
use crate::ai4csi::{
    rx_refine, stack_csi, tensor_to_csi, Deployment, E2EModel, E2EModelConfig, E2EVariant, RxModelConfig,
    DEFAULT_LATENT_BITS,
};
use crate::channel::ChannelTensor;
use crate::error::{Error, Result};
use crate::legacy::{
    explicit_decode, explicit_encode, type1_decode, type1_encode, type2_decode, type2_encode, DftGrid, ExplicitConfig,
    FeedbackOverhead, ReconstructedCsi, Type1Config, Type2Config, DEFAULT_EXPLICIT_BITS,
};
use crate::numerics::{derive_seed, inner, norm_sqr, SeededRng, C64};
use crate::pilots::{build_pattern, estimate, observe_pilots, subband_eigen, subband_partition, ChannelEstimate, Density};

fn full() -> Density {
    Density::FULL
}

fn explicit_bits() -> u32 {
    DEFAULT_EXPLICIT_BITS
}

fn latent_bits() -> u32 {
    DEFAULT_LATENT_BITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeSpec {
    /// True per-subcarrier channel, no feedback: the upper bound.
    Ideal,
    Type1 {
        subband_rb: usize,
        phase_bits: u32,
        #[serde(default = "full")]
        density: Density,
    },
    Type2 {
        subband_rb: usize,
        codewords: usize,
        phase_bits: u32,
        amplitude_bits: u32,
        #[serde(default = "full")]
        density: Density,
    },
    Explicit {
        #[serde(default = "full")]
        density: Density,
        #[serde(default = "explicit_bits")]
        bits: u32,
    },
    RxType2 {
        subband_rb: usize,
        codewords: usize,
        phase_bits: u32,
        amplitude_bits: u32,
        #[serde(default = "full")]
        density: Density,
        conv_width: usize,
        depth: usize,
    },
    RxExplicit {
        #[serde(default = "full")]
        density: Density,
        #[serde(default = "explicit_bits")]
        bits: u32,
        conv_width: usize,
        depth: usize,
    },
    E2e {
        variant: E2EVariant,
        latent: usize,
        #[serde(default = "latent_bits")]
        bits: u32,
        #[serde(default = "full")]
        density: Density,
        conv_width: usize,
        depth: usize,
        #[serde(default)]
        qat_epochs: usize,
    },
}

impl SchemeSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SchemeSpec::Ideal => "ideal",
            SchemeSpec::Type1 { .. } => "type1",
            SchemeSpec::Type2 { .. } => "type2",
            SchemeSpec::Explicit { .. } => "explicit",
            SchemeSpec::RxType2 { .. } => "rx_type2",
            SchemeSpec::RxExplicit { .. } => "rx_explicit",
            SchemeSpec::E2e { .. } => "e2e",
        }
    }

    pub fn is_ai(&self) -> bool {
        matches!(
            self,
            SchemeSpec::RxType2 { .. } | SchemeSpec::RxExplicit { .. } | SchemeSpec::E2e { .. }
        )
    }

    pub fn density(&self) -> Density {
        match *self {
            SchemeSpec::Ideal => Density::FULL,
            SchemeSpec::Type1 { density, .. }
            | SchemeSpec::Type2 { density, .. }
            | SchemeSpec::Explicit { density, .. }
            | SchemeSpec::RxType2 { density, .. }
            | SchemeSpec::RxExplicit { density, .. }
            | SchemeSpec::E2e { density, .. } => density,
        }
    }

    fn subband_rb(&self) -> usize {
        match *self {
            SchemeSpec::Type1 { subband_rb, .. }
            | SchemeSpec::Type2 { subband_rb, .. }
            | SchemeSpec::RxType2 { subband_rb, .. } => subband_rb,
            _ => 1,
        }
    }

    /// Frequency units the BS reconstructs (before any refinement).
    pub fn subbands(&self, sys: &SystemConfig) -> usize {
        match self {
            SchemeSpec::Ideal => sys.k(),
            SchemeSpec::Explicit { density, .. } | SchemeSpec::RxExplicit { density, .. } => {
                density.locations(sys.rb_count)
            }
            SchemeSpec::E2e { .. } => sys.rb_count,
            _ => sys.rb_count.div_ceil(self.subband_rb()),
        }
    }

    pub fn type1_config(&self, sys: &SystemConfig) -> Option<Result<Type1Config>> {
        match *self {
            SchemeSpec::Type1 { phase_bits, .. } => Some(Type1Config::new(self.subbands(sys), phase_bits)),
            _ => None,
        }
    }

    pub fn type2_config(&self, sys: &SystemConfig) -> Option<Result<Type2Config>> {
        match *self {
            SchemeSpec::Type2 {
                codewords,
                phase_bits,
                amplitude_bits,
                ..
            }
            | SchemeSpec::RxType2 {
                codewords,
                phase_bits,
                amplitude_bits,
                ..
            } => Some(Type2Config::from_codewords(
                self.subbands(sys),
                codewords,
                phase_bits,
                amplitude_bits,
            )),
            _ => None,
        }
    }

    pub fn explicit_config(&self, sys: &SystemConfig) -> Option<ExplicitConfig> {
        match *self {
            SchemeSpec::Explicit { density, bits } | SchemeSpec::RxExplicit { density, bits, .. } => {
                Some(ExplicitConfig {
                    bits,
                    ..ExplicitConfig::new(density, sys.nt(), sys.rb_count)
                })
            }
            _ => None,
        }
    }

    pub fn rx_config(&self, sys: &SystemConfig) -> Option<RxModelConfig> {
        match *self {
            SchemeSpec::RxType2 { conv_width, depth, .. } | SchemeSpec::RxExplicit { conv_width, depth, .. } => {
                Some(RxModelConfig {
                    height: sys.rb_count,
                    width: sys.nt(),
                    conv_width,
                    depth,
                })
            }
            _ => None,
        }
    }

    pub fn e2e_config(&self, sys: &SystemConfig) -> Option<E2EModelConfig> {
        match *self {
            SchemeSpec::E2e {
                variant,
                latent,
                bits,
                conv_width,
                depth,
                ..
            } => Some(E2EModelConfig {
                variant,
                height: sys.rb_count,
                width: sys.nt(),
                latent,
                latent_bits: bits,
                conv_width,
                depth,
            }),
            _ => None,
        }
    }

    pub fn validate(&self, sys: &SystemConfig) -> Result<()> {
        if self.subband_rb() == 0 {
            return Err(Error::config("subband_rb", "must be >= 1"));
        }
        if sys.nt() != 2 * DftGrid::default().ports_per_pol() && (self.type1_config(sys).is_some() || self.type2_config(sys).is_some()) {
            return Err(Error::config("system.geometry", "codebooks need a 4x4 dual-polarized panel"));
        }
        if let Some(c) = self.type1_config(sys) {
            c?;
        }
        if let Some(c) = self.type2_config(sys) {
            c?;
        }
        if let Some(c) = self.explicit_config(sys) {
            c.quantizer()?;
            build_pattern(c.density, c.ports, c.rb_count)?;
        }
        build_pattern(self.density(), sys.nt(), sys.rb_count)?;
        if let Some(c) = self.rx_config(sys) {
            c.validate()?;
        }
        if let Some(c) = self.e2e_config(sys) {
            c.validate()?;
        }
        Ok(())
    }

    pub fn bits_per_report(&self, sys: &SystemConfig) -> Result<usize> {
        if let Some(c) = self.type1_config(sys) {
            return Ok(c?.bits_per_report());
        }
        if let Some(c) = self.type2_config(sys) {
            return Ok(c?.bits_per_report());
        }
        if let Some(c) = self.explicit_config(sys) {
            return Ok(c.bits_per_report());
        }
        if let Some(c) = self.e2e_config(sys) {
            return Ok(c.bits_per_report());
        }
        Ok(0)
    }

    /// Header tag a trained model for this point must carry.
    pub fn deployment(&self) -> Option<Deployment> {
        self.is_ai().then(|| Deployment {
            scheme: self.kind().to_string(),
            density: self.density(),
            subband_size_rb: self.subband_rb(),
            latent: match self {
                SchemeSpec::E2e { latent, .. } => Some(*latent),
                _ => None,
            },
        })
    }

    /// Classical counts plus network FLOPs, per report.
    pub fn flops(&self, sys: &SystemConfig) -> Result<SchemeFlops> {
        let nt = sys.nt();
        let rb_eigen = sys.rb_count as u64 * eigen_flops(12 * sys.nr, nt);
        let grid = DftGrid::default();
        let grid_beams = grid.n1 * grid.o1 * grid.n2 * grid.o2;
        let subband_eigen_cost = || -> Result<u64> {
            Ok(subband_partition(sys.k(), self.subband_rb())?
                .iter()
                .map(|&(lo, hi)| eigen_flops((hi - lo) * sys.nr, nt))
                .sum())
        };
        let mut flops = match self {
            SchemeSpec::Ideal => SchemeFlops::default(),
            SchemeSpec::Type1 { phase_bits, .. } => {
                let s = self.subbands(sys);
                SchemeFlops {
                    ue: subband_eigen_cost()?
                        + beam_search_flops(grid_beams, grid.ports_per_pol(), s)
                        + ((8 * s as u64) << phase_bits),
                    bs: 8 * (s * nt) as u64,
                }
            }
            SchemeSpec::Type2 { .. } | SchemeSpec::RxType2 { .. } => {
                let cfg = self.type2_config(sys).expect("type2 family")?;
                let s = self.subbands(sys) as u64;
                let coeffs = 2 * cfg.beams as u64;
                SchemeFlops {
                    ue: subband_eigen_cost()?
                        + beam_search_flops(grid_beams, grid.ports_per_pol(), s as usize)
                        + 8 * s * coeffs * grid.ports_per_pol() as u64,
                    bs: 8 * s * coeffs * nt as u64,
                }
            }
            SchemeSpec::Explicit { .. } | SchemeSpec::RxExplicit { .. } => {
                let cfg = self.explicit_config(sys).expect("explicit family");
                SchemeFlops {
                    ue: 8 * (cfg.locations() * nt) as u64,
                    bs: 8 * (sys.k() * nt) as u64 + rb_eigen,
                }
            }
            SchemeSpec::E2e { .. } => {
                let cfg = self.e2e_config(sys).expect("e2e");
                let (specs, split) = cfg.specs();
                let report = count_flops_for(cfg.input_dims(), &specs)?;
                SchemeFlops {
                    ue: rb_eigen + report.per_layer[..split].iter().sum::<u64>(),
                    bs: report.per_layer[split..].iter().sum(),
                }
            }
        };
        if let Some(cfg) = self.rx_config(sys) {
            flops.bs += count_flops_for(cfg.input_dims(), &cfg.specs())?.total;
        }
        Ok(flops)
    }
}

/// A named grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub id: String,
    #[serde(flatten)]
    pub scheme: SchemeSpec,
}

#[derive(Debug, Clone)]
pub enum LoadedModel {
    None,
    Rx(ModelGraph),
    E2E(E2EModel),
}

/// UE-side pilot reception and estimation at `density`.
pub fn ue_estimate(h: &ChannelTensor, density: Density, sys: &SystemConfig, rng: &mut SeededRng) -> Result<ChannelEstimate> {
    let pattern = build_pattern(density, h.nt(), h.k() / crate::pilots::SUBCARRIERS_PER_RB)?;
    let obs = observe_pilots(h, &pattern, sys.snr_db, rng)?;
    estimate(&obs, sys.interpolation)
}

/// Per-RB dominant directions of a channel (the fine-granularity target).
pub fn per_rb_truth(h: &ChannelTensor) -> Result<ReconstructedCsi> {
    Ok(ReconstructedCsi::from_subbands(&subband_eigen(h, 1, 1)?))
}

/// Per-RB eigen-channels `√(λ/12)·v`, each rotated so that its inner product
/// with the RB's mean channel direction is real positive, then scaled to unit
/// mean power per RB. Close to linear in the underlying path gains.
pub fn eigen_channel_stack(h: &ChannelTensor) -> Result<Vec<Vec<C64>>> {
    let sb = subband_eigen(h, 1, 1)?;
    let mut stack = Vec::with_capacity(sb.subbands());
    for (s, &(lo, hi)) in sb.partition.iter().enumerate() {
        let v = sb.primary(s);
        let mut mean = vec![C64::new(0.0, 0.0); h.nt()];
        let mut lambda = 0.0;
        for f in lo..hi {
            let row = h.row(f, 0);
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x.conj());
            lambda += row.iter().zip(v).map(|(x, y)| x * y).sum::<C64>().norm_sqr();
        }
        let rot = inner(v, &mean);
        let phase = if rot.norm() > 0.0 { rot / rot.norm() } else { C64::new(1.0, 0.0) };
        let gain = (lambda / (hi - lo) as f64).sqrt();
        stack.push(v.iter().map(|x| x * phase * gain).collect::<Vec<_>>());
    }
    let power = stack.iter().map(|v| norm_sqr(v)).sum::<f64>() / stack.len() as f64;
    if power > 0.0 {
        let scale = 1.0 / power.sqrt();
        stack.iter_mut().flatten().for_each(|x| *x *= scale);
    }
    Ok(stack)
}

/// Rotates `v` so that `⟨reference, v⟩` is real and non-negative.
pub fn align_phase(v: &mut [C64], reference: &[C64]) {
    let c = inner(reference, v);
    if c.norm() > 0.0 {
        let rot = c.conj() / c.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
}

fn per_subcarrier(h: &ChannelTensor) -> Result<ReconstructedCsi> {
    let partition = (0..h.k()).map(|f| (f, f + 1)).collect();
    let vectors = (0..h.k()).map(|f| h.row(f, 0).iter().map(|x| x.conj()).collect()).collect();
    ReconstructedCsi::new(partition, vectors)
}

/// A scheme bound to its system and (for AI schemes) its trained model.
#[derive(Debug, Clone)]
pub struct PreparedScheme {
    pub spec: SchemeSpec,
    pub system: SystemConfig,
    pub model: LoadedModel,
}

impl PreparedScheme {
    pub fn new(spec: SchemeSpec, system: SystemConfig, model: LoadedModel) -> Result<Self> {
        spec.validate(&system)?;
        let ok = match (&spec, &model) {
            (SchemeSpec::RxType2 { .. } | SchemeSpec::RxExplicit { .. }, LoadedModel::Rx(g)) => {
                g.input_dims() == spec.rx_config(&system).expect("rx").input_dims()
            }
            (SchemeSpec::E2e { .. }, LoadedModel::E2E(m)) => Some(m.config) == spec.e2e_config(&system),
            (s, LoadedModel::None) => !s.is_ai(),
            _ => false,
        };
        if !ok {
            return Err(Error::ModelMismatch(format!("{} cannot run with the supplied model", spec.kind())));
        }
        Ok(Self { spec, system, model })
    }

    fn rb_partition(&self) -> Result<Vec<(usize, usize)>> {
        subband_partition(self.system.k(), 1)
    }

    /// Everything up to the network: legacy decode (regridded per RB for Rx),
    /// or the UE-side per-RB eigen stack for E2E, or the final CSI otherwise.
    pub fn network_input(&self, h: &ChannelTensor, rng: &mut SeededRng) -> Result<ReconstructedCsi> {
        let sys = &self.system;
        let spec = &self.spec;
        if let SchemeSpec::Ideal = spec {
            return per_subcarrier(h);
        }
        let est = ue_estimate(h, spec.density(), sys, rng)?;
        let coarse = if let Some(cfg) = spec.type1_config(sys) {
            let cfg = cfg?;
            let sb = subband_eigen(&est.channel, spec.subband_rb(), 1)?;
            type1_decode(&type1_encode(&sb, &cfg)?, &cfg, &sb.partition)?
        } else if let Some(cfg) = spec.type2_config(sys) {
            let cfg = cfg?;
            let sb = subband_eigen(&est.channel, spec.subband_rb(), 1)?;
            type2_decode(&type2_encode(&sb, &cfg)?, &cfg, &sb.partition)?
        } else if let Some(cfg) = spec.explicit_config(sys) {
            let decoded = explicit_decode(&explicit_encode(&est, &cfg)?, &cfg, sys.interpolation)?;
            per_rb_truth(&decoded)?
        } else {
            return Ok(ReconstructedCsi {
                partition: self.rb_partition()?,
                vectors: eigen_channel_stack(&est.channel)?,
            });
        };
        Ok(if spec.is_ai() {
            coarse.regrid(&self.rb_partition()?)
        } else {
            coarse
        })
    }

    /// Reconstructions for `samples`, sample `i` drawing pilot noise from `seeds[i]`.
    pub fn reconstruct_batch(&self, samples: &[&ChannelTensor], seeds: &[u64]) -> Result<Vec<ReconstructedCsi>> {
        let inputs: Vec<ReconstructedCsi> = samples
            .par_iter()
            .zip(seeds)
            .map(|(h, &s)| self.network_input(h, &mut SeededRng::new(s)))
            .collect::<Result<_>>()?;
        const CHUNK: usize = 32;
        match &self.model {
            LoadedModel::None => Ok(inputs),
            LoadedModel::Rx(graph) => {
                let mut out = Vec::with_capacity(inputs.len());
                for chunk in inputs.chunks(CHUNK) {
                    out.extend(rx_refine(graph, &chunk.iter().collect::<Vec<_>>())?);
                }
                Ok(out)
            }
            LoadedModel::E2E(model) => {
                let partition = self.rb_partition()?;
                let mut out = Vec::with_capacity(inputs.len());
                for chunk in inputs.chunks(CHUNK) {
                    let grids: Vec<_> = chunk.iter().map(|c| c.vectors.as_slice()).collect();
                    let codes = model.encode(&stack_csi(&grids)?)?;
                    let received = codes
                        .iter()
                        .map(|c| model.from_message(&model.to_message(c)))
                        .collect::<Result<Vec<_>>>()?;
                    let y = model.decode(&received)?;
                    for n in 0..chunk.len() {
                        out.push(ReconstructedCsi::new(partition.clone(), tensor_to_csi(&y, n)?)?);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Network inputs and per-RB ground truth for supervised training.
pub struct TrainingPairs {
    pub inputs: Tensor4,
    pub targets: Tensor4,
}

/// Runs the pre-network pipeline over `samples` (pilot noise from
/// `derive_seed(seed, i)`) and pairs it with the per-RB truth.
pub fn training_pairs(spec: &SchemeSpec, sys: &SystemConfig, samples: &[ChannelTensor], seed: u64) -> Result<TrainingPairs> {
    if !spec.is_ai() {
        return Err(Error::InvalidArgument(format!("{} has no model to train", spec.kind())));
    }
    spec.validate(sys)?;
    let stage = PreparedScheme {
        spec: spec.clone(),
        system: *sys,
        model: LoadedModel::None,
    };
    let pairs: Vec<(ReconstructedCsi, ReconstructedCsi)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let input = stage.network_input(h, &mut SeededRng::new(derive_seed(seed, i as u64)))?;
            let target = if let SchemeSpec::E2e { .. } = spec {
                ReconstructedCsi {
                    partition: input.partition.clone(),
                    vectors: eigen_channel_stack(h)?,
                }
            } else {
                let mut truth = per_rb_truth(h)?;
                for (t, c) in truth.vectors.iter_mut().zip(&input.vectors) {
                    align_phase(t, c);
                }
                truth
            };
            Ok((input, target))
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<_> = pairs.iter().map(|p| p.0.vectors.as_slice()).collect();
    let targets: Vec<_> = pairs.iter().map(|p| p.1.vectors.as_slice()).collect();
    if pairs.is_empty() {
        let dims = [0, 2, sys.rb_count, sys.nt()];
        return Ok(TrainingPairs {
            inputs: Tensor4::zeros(dims),
            targets: Tensor4::zeros(dims),
        });
    }
    Ok(TrainingPairs {
        inputs: stack_csi(&inputs)?,
        targets: stack_csi(&targets)?,
    })
}
