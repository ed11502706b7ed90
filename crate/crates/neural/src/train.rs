use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::model::ModelGraph;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Tensor4;

/// Additive uniform noise of total width `width` applied to the activation
/// leaving layer `after_layer`, during training only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInjection {
    pub after_layer: usize,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Multiplicative learning-rate factor applied after every epoch.
    #[serde(default = "one")]
    pub lr_decay: f64,
    #[serde(default)]
    pub noise: Option<NoiseInjection>,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            optimizer: OptimizerKind::default(),
            seed: 0,
            lr_decay: 1.0,
            noise: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(NeuralError::InvalidConfig(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss, plus validation loss when a validation set is given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// Mean squared error over every element, and its gradient with respect to `output`.
pub fn mse(output: &Tensor4, target: &Tensor4) -> (f64, Tensor4) {
    let n = output.data().len().max(1) as f64;
    let mut grad = output.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    (loss / n, grad)
}

/// Minibatch training against an MSE objective.
pub fn train(
    model: ModelGraph,
    inputs: &Tensor4,
    targets: &Tensor4,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, LossTrace)> {
    train_with_validation(model, inputs, targets, None, cfg)
}

/// As [`train`], also tracking validation loss. When a validation set is
/// supplied the returned weights are those of the epoch with the lowest
/// validation loss.
pub fn train_with_validation(
    mut model: ModelGraph,
    inputs: &Tensor4,
    targets: &Tensor4,
    validation: Option<(&Tensor4, &Tensor4)>,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, LossTrace)> {
    cfg.validate()?;
    let n = inputs.batch();
    if n == 0 || targets.batch() != n {
        return Err(NeuralError::InvalidConfig(format!(
            "need matching non-empty inputs/targets, got {n} and {}",
            targets.batch()
        )));
    }
    if targets.sample_dims() != model.output_dims() {
        return Err(NeuralError::InvalidConfig(format!(
            "target dims {:?} differ from model output {:?}",
            targets.sample_dims(),
            model.output_dims()
        )));
    }
    if let Some(noise) = cfg.noise {
        if noise.after_layer >= model.len() {
            return Err(NeuralError::InvalidConfig(format!(
                "noise injection after layer {} but model has {} layers",
                noise.after_layer,
                model.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = LossTrace::default();
    let mut best: Option<(f64, ModelGraph)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select(batch);
            let t = targets.select(batch);
            let acts = match cfg.noise {
                Some(NoiseInjection { after_layer, width }) => {
                    let mut add = |a: &mut Tensor4| {
                        for v in a.data_mut() {
                            *v += width * (rng.random::<f64>() - 0.5);
                        }
                    };
                    model.forward_cached_with_noise(&x, after_layer, &mut add)?
                }
                None => model.forward_cached(&x)?,
            };
            let (loss, grad) = mse(acts.output(), &t);
            if !loss.is_finite() {
                return Err(NeuralError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            let (grads, _) = model.backward(&acts, &grad)?;
            opt.step(&mut model, &grads);
        }
        trace.train.push(total / n as f64);
        if let Some((vx, vt)) = validation {
            let vloss = evaluate_loss(&model, vx, vt, cfg.batch_size.max(64))?;
            if !vloss.is_finite() {
                return Err(NeuralError::Diverged { epoch });
            }
            trace.validation.push(vloss);
            if best.as_ref().is_none_or(|(b, _)| vloss < *b) {
                best = Some((vloss, model.clone()));
            }
        }
        opt.set_learning_rate(opt.learning_rate() * cfg.lr_decay);
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, trace))
}

/// Mean MSE over a dataset, evaluated in chunks.
pub fn evaluate_loss(model: &ModelGraph, inputs: &Tensor4, targets: &Tensor4, chunk: usize) -> Result<f64> {
    let n = inputs.batch();
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for c in idx.chunks(chunk.max(1)) {
        let out = model.forward(&inputs.select(c))?;
        let (loss, _) = mse(&out, &targets.select(c));
        total += loss * c.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}
