//! Learned CSI reconstruction: a super-resolution refiner for legacy feedback
//! (Rx) and two autoencoder layouts for end-to-end feedback (E2E).
//!
//! CSI enters the networks as `(2, height, width)` tensors: channel 0 holds
//! real parts, channel 1 imaginary parts, height runs over frequency units
//! and width over tx ports.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use csikit_neural::{
    count_flops, read_model, train_with_validation, write_model, LayerSpec, LossTrace, ModelGraph, NoiseInjection,
    Tensor4, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::legacy::{BitWriter, FeedbackMessage, FeedbackOverhead, ReconstructedCsi, SchemeTag};
use crate::numerics::C64;
use crate::pilots::Density;
use crate::quantizer::UniformQuantizer;

pub const DEFAULT_LATENT_BITS: u32 = 5;
/// Quantile of training-set latent magnitudes used as the clip scale.
pub const LATENT_CLIP_QUANTILE: f64 = 0.999;

/// Packs `rows` (height × width complex) into a single-sample tensor.
pub fn csi_to_tensor(rows: &[Vec<C64>]) -> Result<Tensor4> {
    stack_csi(&[rows])
}

/// Packs several equally shaped CSI grids into one batch.
pub fn stack_csi(batch: &[&[Vec<C64>]]) -> Result<Tensor4> {
    let h = batch.first().map_or(0, |r| r.len());
    let w = batch.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let plane = h * w;
    let mut data = vec![0.0; batch.len() * 2 * plane];
    for (n, rows) in batch.iter().enumerate() {
        if rows.len() != h || rows.iter().any(|r| r.len() != w) {
            return Err(Error::InvalidArgument("CSI grids in a batch must share a shape".into()));
        }
        let base = n * 2 * plane;
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                data[base + i * w + j] = v.re;
                data[base + plane + i * w + j] = v.im;
            }
        }
    }
    Ok(Tensor4::from_vec([batch.len(), 2, h, w], data)?)
}

/// Inverse of [`stack_csi`] for sample `n`.
pub fn tensor_to_csi(t: &Tensor4, n: usize) -> Result<Vec<Vec<C64>>> {
    let [_, c, h, w] = t.dims();
    if c != 2 || n >= t.batch() {
        return Err(Error::InvalidArgument(format!(
            "expected a (N, 2, H, W) tensor with sample {n}, got {:?}",
            t.dims()
        )));
    }
    let s = t.sample(n);
    let plane = h * w;
    Ok((0..h)
        .map(|i| (0..w).map(|j| C64::new(s[i * w + j], s[plane + i * w + j])).collect())
        .collect())
}

fn conv(c_in: usize, c_out: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: c_in,
        out_channels: c_out,
        kernel: 3,
    }
}

/// `conv → relu → (conv → relu)^(depth−2) → conv`, mapping 2 channels to 2.
fn conv_stack(width: usize, depth: usize) -> Vec<LayerSpec> {
    let mut specs = vec![conv(2, width), LayerSpec::Relu];
    for _ in 0..depth.saturating_sub(2) {
        specs.push(conv(width, width));
        specs.push(LayerSpec::Relu);
    }
    specs.push(conv(width, 2));
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RxModelConfig {
    pub height: usize,
    pub width: usize,
    pub conv_width: usize,
    pub depth: usize,
}

impl RxModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("rx.shape", "height and width must be >= 1"));
        }
        if self.conv_width == 0 || self.depth < 2 {
            return Err(Error::config("rx.depth", "need conv_width >= 1 and depth >= 2"));
        }
        Ok(())
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [2, self.height, self.width]
    }

    /// Conv trunk plus the global residual skip.
    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut s = conv_stack(self.conv_width, self.depth);
        s.push(LayerSpec::ResidualAdd { from: 0 });
        s
    }
}

/// Rx refiner with its final convolution zeroed, so it starts as the identity.
pub fn build_rx(cfg: &RxModelConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let specs = cfg.specs();
    let last_conv = specs.len() - 2;
    let mut m = ModelGraph::new(cfg.input_dims(), specs, seed)?;
    m.zero_layer(last_conv);
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum E2EVariant {
    Balanced,
    LeanUe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct E2EModelConfig {
    pub variant: E2EVariant,
    pub height: usize,
    pub width: usize,
    pub latent: usize,
    pub latent_bits: u32,
    pub conv_width: usize,
    /// Conv layers in the lean-UE decoder (the balanced layout uses fixed 3-layer blocks).
    pub depth: usize,
}

impl E2EModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("e2e.shape", "height and width must be >= 1"));
        }
        if self.latent == 0 {
            return Err(Error::config("e2e.latent", "must be >= 1"));
        }
        if !(1..=16).contains(&self.latent_bits) {
            return Err(Error::config("e2e.latent_bits", "must be in 1..=16"));
        }
        if self.conv_width == 0 || self.depth < 2 {
            return Err(Error::config("e2e.depth", "need conv_width >= 1 and depth >= 2"));
        }
        Ok(())
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [2, self.height, self.width]
    }

    fn volume(&self) -> usize {
        2 * self.height * self.width
    }

    /// Encoder and decoder layers as one stack, with the index where the decoder starts.
    pub fn specs(&self) -> (Vec<LayerSpec>, usize) {
        let v = self.volume();
        let reshape = LayerSpec::Reshape {
            channels: 2,
            height: self.height,
            width: self.width,
        };
        let dense = |i, o| LayerSpec::Dense { inputs: i, outputs: o };
        match self.variant {
            E2EVariant::LeanUe => {
                let mut s = vec![dense(v, self.latent), dense(self.latent, v), reshape];
                s.extend(conv_stack(self.conv_width, self.depth));
                s.push(LayerSpec::ResidualAdd { from: 3 });
                (s, 1)
            }
            E2EVariant::Balanced => {
                let mut s = vec![dense(v, v), reshape.clone()];
                s.extend(conv_stack(self.conv_width, 3));
                s.push(dense(v, self.latent));
                let split = s.len();
                s.push(dense(self.latent, v));
                s.push(reshape.clone());
                for _ in 0..2 {
                    let start = s.len();
                    s.extend(conv_stack(self.conv_width, 3));
                    s.push(LayerSpec::ResidualAdd { from: start });
                }
                s.push(dense(v, v));
                s.push(reshape);
                (s, split)
            }
        }
    }
}

pub fn build_e2e(cfg: &E2EModelConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let (specs, _) = cfg.specs();
    let n = specs.len();
    let mut m = ModelGraph::new(cfg.input_dims(), specs, seed)?;
    if cfg.variant == E2EVariant::LeanUe {
        // final conv before the decoder's residual skip
        m.zero_layer(n - 2);
    }
    Ok(m)
}

/// Quantized encoder output: the E2E feedback payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentCode {
    pub levels: Vec<u64>,
    pub bits: u32,
}

impl LatentCode {
    pub fn bit_len(&self) -> usize {
        self.levels.len() * self.bits as usize
    }
}

/// A trained autoencoder split at the latent layer, with its frozen clip scale.
#[derive(Debug, Clone)]
pub struct E2EModel {
    pub config: E2EModelConfig,
    pub graph: ModelGraph,
    pub split: usize,
    pub quantizer: UniformQuantizer,
}

impl FeedbackOverhead for E2EModelConfig {
    fn bits_per_report(&self) -> usize {
        self.latent * self.latent_bits as usize
    }
}

impl E2EModel {
    fn hash(&self) -> [u8; 8] {
        config_hash(&self.config)
    }

    /// Unquantized latent vectors for a batch, `(N, latent, 1, 1)`.
    pub fn latent(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.graph.forward_range(x, 0, self.split)?)
    }

    pub fn encode(&self, x: &Tensor4) -> Result<Vec<LatentCode>> {
        let z = self.latent(x)?;
        Ok((0..z.batch())
            .map(|n| LatentCode {
                levels: z.sample(n).iter().map(|&v| self.quantizer.index(v)).collect(),
                bits: self.quantizer.bits,
            })
            .collect())
    }

    pub fn decode(&self, codes: &[LatentCode]) -> Result<Tensor4> {
        let latent = self.config.latent;
        let mut data = Vec::with_capacity(codes.len() * latent);
        for c in codes {
            if c.levels.len() != latent || c.bits != self.quantizer.bits {
                return Err(Error::Format(format!(
                    "latent code has {} bits, model expects {}",
                    c.bit_len(),
                    self.config.bits_per_report()
                )));
            }
            data.extend(c.levels.iter().map(|&j| self.quantizer.value(j)));
        }
        let z = Tensor4::from_vec([codes.len(), latent, 1, 1], data)?;
        Ok(self.graph.forward_range(&z, self.split, self.graph.len())?)
    }

    pub fn to_message(&self, code: &LatentCode) -> FeedbackMessage {
        let mut w = BitWriter::new();
        for &l in &code.levels {
            w.push(l, code.bits);
        }
        let msg = FeedbackMessage::from_writer(SchemeTag::Latent, self.hash(), w);
        assert_eq!(msg.bit_len, self.config.bits_per_report(), "latent payload length diverged from overhead formula");
        msg
    }

    pub fn from_message(&self, msg: &FeedbackMessage) -> Result<LatentCode> {
        msg.expect(SchemeTag::Latent, self.hash(), self.config.bits_per_report())?;
        let mut r = msg.reader();
        let levels = (0..self.config.latent)
            .map(|_| r.read(self.quantizer.bits))
            .collect::<Result<_>>()?;
        Ok(LatentCode {
            levels,
            bits: self.quantizer.bits,
        })
    }

    pub fn encoder_flops(&self) -> u64 {
        count_flops(&self.graph).per_layer[..self.split].iter().sum()
    }

    pub fn decoder_flops(&self) -> u64 {
        count_flops(&self.graph).per_layer[self.split..].iter().sum()
    }
}

/// `q`-quantile of latent magnitudes over `inputs` (clip scale for quantization).
pub fn latent_clip(graph: &ModelGraph, split: usize, inputs: &Tensor4) -> Result<f64> {
    let mut mags = Vec::new();
    let idx: Vec<usize> = (0..inputs.batch()).collect();
    for chunk in idx.chunks(64) {
        let z = graph.forward_range(&inputs.select(chunk), 0, split)?;
        mags.extend(z.data().iter().map(|v| v.abs()));
    }
    if mags.is_empty() {
        return Err(Error::InvalidArgument("latent clip needs at least one input".into()));
    }
    mags.sort_by(f64::total_cmp);
    let pos = ((LATENT_CLIP_QUANTILE * mags.len() as f64).ceil() as usize).clamp(1, mags.len()) - 1;
    Ok(mags[pos].max(1e-12))
}

/// Labelled training data for one model.
pub struct TrainingSet<'a> {
    pub inputs: &'a Tensor4,
    pub targets: &'a Tensor4,
    pub val_inputs: &'a Tensor4,
    pub val_targets: &'a Tensor4,
}

impl TrainingSet<'_> {
    fn validation(&self) -> Option<(&Tensor4, &Tensor4)> {
        (self.val_inputs.batch() > 0).then_some((self.val_inputs, self.val_targets))
    }
}

/// Supervised refinement toward ground truth.
pub fn train_rx(cfg: &RxModelConfig, data: &TrainingSet, train: &TrainConfig) -> Result<(ModelGraph, LossTrace)> {
    let model = build_rx(cfg, train.seed)?;
    Ok(train_with_validation(model, data.inputs, data.targets, data.validation(), train)?)
}

/// Unquantized end-to-end training, then the clip scale is frozen from the
/// training latents. `qat_epochs > 0` adds fine-tuning with uniform noise of
/// one quantizer step injected at the latent.
pub fn train_e2e(
    cfg: &E2EModelConfig,
    data: &TrainingSet,
    train: &TrainConfig,
    qat_epochs: usize,
) -> Result<(E2EModel, LossTrace)> {
    let graph = build_e2e(cfg, train.seed)?;
    let (_, split) = cfg.specs();
    let (mut graph, mut trace) = train_with_validation(graph, data.inputs, data.targets, data.validation(), train)?;
    let mut clip = latent_clip(&graph, split, data.inputs)?;
    if qat_epochs > 0 {
        let step = UniformQuantizer::new(cfg.latent_bits, clip)?.step();
        let fine = TrainConfig {
            epochs: qat_epochs,
            noise: Some(NoiseInjection {
                after_layer: split - 1,
                width: step,
            }),
            seed: train.seed ^ 0x5157,
            ..train.clone()
        };
        let (g, t) = train_with_validation(graph, data.inputs, data.targets, data.validation(), &fine)?;
        graph = g;
        trace.train.extend(t.train);
        trace.validation.extend(t.validation);
        clip = latent_clip(&graph, split, data.inputs)?;
    }
    Ok((
        E2EModel {
            config: *cfg,
            graph,
            split,
            quantizer: UniformQuantizer::new(cfg.latent_bits, clip)?,
        },
        trace,
    ))
}

/// Runs the refiner on a batch of coarse CSI already on the fine grid.
pub fn rx_refine(model: &ModelGraph, coarse: &[&ReconstructedCsi]) -> Result<Vec<ReconstructedCsi>> {
    let grids: Vec<&[Vec<C64>]> = coarse.iter().map(|c| c.vectors.as_slice()).collect();
    let x = stack_csi(&grids)?;
    let y = model.forward(&x)?;
    coarse
        .iter()
        .enumerate()
        .map(|(n, c)| ReconstructedCsi::new(c.partition.clone(), tensor_to_csi(&y, n)?))
        .collect()
}

/// Normalized mean-squared error `Σ|a−b|² / Σ|b|²` in dB (`b` is the reference).
pub fn nmse_db(estimate: &Tensor4, reference: &Tensor4) -> f64 {
    let (mut err, mut pow) = (0.0, 0.0);
    for (a, b) in estimate.data().iter().zip(reference.data()) {
        err += (a - b) * (a - b);
        pow += b * b;
    }
    10.0 * (err / pow).log10()
}

/// Phase-invariant error between unit directions, per row of each sample:
/// the mean of `min_φ ‖â·e^{jφ} − b̂‖² = 2 − 2|⟨â, b̂⟩|`, in dB.
pub fn direction_nmse_db(estimate: &Tensor4, reference: &Tensor4) -> f64 {
    let [n, _, h, w] = reference.dims();
    let plane = h * w;
    let mut total = 0.0;
    for s in 0..n {
        let (a, b) = (estimate.sample(s), reference.sample(s));
        for i in 0..h {
            let (mut ab, mut aa, mut bb) = (C64::new(0.0, 0.0), 0.0, 0.0);
            for j in 0..w {
                let x = C64::new(a[i * w + j], a[plane + i * w + j]);
                let y = C64::new(b[i * w + j], b[plane + i * w + j]);
                ab += x.conj() * y;
                aa += x.norm_sqr();
                bb += y.norm_sqr();
            }
            let c = if aa > 0.0 && bb > 0.0 { ab.norm() / (aa * bb).sqrt() } else { 0.0 };
            total += 2.0 - 2.0 * c.min(1.0);
        }
    }
    10.0 * (total / (n * h) as f64).log10()
}

/// The operating point a model was trained for. Loading under any other
/// deployment is refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub scheme: String,
    pub density: Density,
    pub subband_size_rb: usize,
    pub latent: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum SavedModel {
    Rx { config: RxModelConfig, graph: ModelGraph },
    E2E(E2EModel),
}

pub fn save_model(path: &Path, model: &SavedModel, deployment: &Deployment) -> Result<()> {
    let (graph, meta) = match model {
        SavedModel::Rx { config, graph } => (graph, json!({"kind": "rx", "model": config})),
        SavedModel::E2E(m) => (
            &m.graph,
            json!({"kind": "e2e", "model": m.config, "split": m.split, "clip": m.quantizer.clip}),
        ),
    };
    let mut meta = meta;
    meta["deployment"] = serde_json::to_value(deployment)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, graph, &meta)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn load_model(path: &Path, expected: &Deployment) -> Result<SavedModel> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingModel(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    let (graph, meta) = read_model(BufReader::new(file))?;
    let deployed: Deployment = serde_json::from_value(meta["deployment"].clone())?;
    if &deployed != expected {
        return Err(Error::ModelMismatch(format!(
            "{} was trained for {deployed:?}, requested {expected:?}",
            path.display()
        )));
    }
    match meta["kind"].as_str() {
        Some("rx") => Ok(SavedModel::Rx {
            config: serde_json::from_value(meta["model"].clone())?,
            graph,
        }),
        Some("e2e") => {
            let config: E2EModelConfig = serde_json::from_value(meta["model"].clone())?;
            let split = meta["split"]
                .as_u64()
                .ok_or_else(|| Error::Format("model file lacks split".into()))? as usize;
            let clip = meta["clip"]
                .as_f64()
                .ok_or_else(|| Error::Format("model file lacks clip".into()))?;
            Ok(SavedModel::E2E(E2EModel {
                quantizer: UniformQuantizer::new(config.latent_bits, clip)?,
                config,
                graph,
                split,
            }))
        }
        other => Err(Error::Format(format!("unknown model kind {other:?}"))),
    }
}
