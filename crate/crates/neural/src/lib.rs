//! A minimal, deterministic neural network toolkit.
//!
//! Models are ordered stacks of [`LayerSpec`]s evaluated on batched
//! [`Tensor4`] values in `(batch, channels, height, width)` layout. The layer
//! set is deliberately small (dense, same-padded stride-1 convolution, ReLU,
//! reshape and residual add) and every layer has an exact reverse-mode
//! gradient, so networks can be trained in double precision and checked
//! against finite differences.
//!
//! Training is reproducible: shuffles and initialisation draw from seeded
//! ChaCha streams, and per-sample gradients are reduced in a fixed order so
//! results do not depend on the size of the rayon thread pool.

mod error;
mod flops;
mod io;
mod layer;
mod model;
mod optim;
mod tensor;
mod train;

pub use error::{NeuralError, Result};
pub use flops::{count_flops, FlopReport};
pub use io::{read_model, write_model, WEIGHT_MAGIC};
pub use layer::LayerSpec;
pub use model::{Activations, Gradients, Layer, ModelGraph};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor4;
pub use flops::count_flops_for;
pub use train::{evaluate_loss, mse, train, train_with_validation, LossTrace, NoiseInjection, TrainConfig};
