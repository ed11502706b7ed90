//! Floating-point operation counts.
//!
//! One multiply-add counts as two FLOPs. Per layer, with `h × w` the spatial
//! size of the layer output:
//!
//! | kind          | FLOPs                                  |
//! |---------------|----------------------------------------|
//! | dense         | `2·in·out + out`                       |
//! | conv2d        | `2·k²·c_in·c_out·h·w + c_out·h·w`      |
//! | relu          | `c·h·w`                                |
//! | residual add  | `c·h·w`                                |
//! | reshape       | 0                                      |

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layer::LayerSpec;
use crate::model::ModelGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub total: u64,
    pub per_layer: Vec<u64>,
}

/// FLOPs for one forward pass of a single sample.
pub fn count_flops(model: &ModelGraph) -> FlopReport {
    let per_layer: Vec<u64> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| layer_flops(&l.spec, model.dims_at(i + 1)))
        .collect();
    FlopReport {
        total: per_layer.iter().sum(),
        per_layer,
    }
}

/// FLOPs for a layer stack that need not be materialised (no weights allocated).
pub fn count_flops_for(input_dims: [usize; 3], specs: &[LayerSpec]) -> Result<FlopReport> {
    let mut dims = vec![input_dims];
    for (i, s) in specs.iter().enumerate() {
        let next = s.output_dims(i, dims[i])?;
        dims.push(next);
    }
    let per_layer: Vec<u64> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| layer_flops(s, dims[i + 1]))
        .collect();
    Ok(FlopReport {
        total: per_layer.iter().sum(),
        per_layer,
    })
}

fn layer_flops(spec: &LayerSpec, out: [usize; 3]) -> u64 {
    let volume = (out[0] * out[1] * out[2]) as u64;
    match *spec {
        LayerSpec::Dense { inputs, outputs } => 2 * (inputs * outputs) as u64 + outputs as u64,
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let hw = (out[1] * out[2]) as u64;
            2 * (kernel * kernel * in_channels * out_channels) as u64 * hw + out_channels as u64 * hw
        }
        LayerSpec::Relu | LayerSpec::ResidualAdd { .. } => volume,
        LayerSpec::Reshape { .. } => 0,
    }
}
