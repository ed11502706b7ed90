use serde::{Deserialize, Serialize};

use crate::model::{Gradients, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one model. Moment buffers mirror the parameter layout.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &ModelGraph) -> Self {
        // Weights and biases of layer i live at slots 2i and 2i+1.
        let buffers: Vec<Vec<f64>> = model
            .layers()
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
            .collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => buffers.clone(),
            _ => Vec::new(),
        };
        Self {
            kind,
            lr,
            step: 0,
            first: buffers,
            second,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, model: &mut ModelGraph, grads: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        let t = self.step as i32;
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            let params = [
                (&mut layer.weights, &grads.weights[i], 2 * i),
                (&mut layer.bias, &grads.bias[i], 2 * i + 1),
            ];
            for (p, g, slot) in params {
                match self.kind {
                    OptimizerKind::Sgd => {
                        p.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
                    }
                    OptimizerKind::Momentum { beta } => {
                        let v = &mut self.first[slot];
                        for ((w, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                            *v = beta * *v + g;
                            *w -= lr * *v;
                        }
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        let c1 = 1.0 - beta1.powi(t);
                        let c2 = 1.0 - beta2.powi(t);
                        let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                        for (((w, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                        {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let mh = *m / c1;
                            let vh = *v / c2;
                            *w -= lr * mh / (vh.sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}
