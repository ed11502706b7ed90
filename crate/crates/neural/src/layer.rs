use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};

/// One stage of a [`crate::ModelGraph`].
///
/// Shapes are per sample, `[channels, height, width]`. Dense layers flatten
/// their input and emit `[outputs, 1, 1]`; convolutions are stride 1 with
/// same padding so height and width pass through unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Adds the activation that entered layer `from` to this layer's input.
    /// `from = 0` over the whole network is the global residual skip.
    ResidualAdd {
        from: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::ResidualAdd { .. } => "residual_add",
        }
    }

    pub(crate) fn kind_id(&self) -> u8 {
        match self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Conv2d { .. } => 2,
            LayerSpec::Relu => 3,
            LayerSpec::Reshape { .. } => 4,
            LayerSpec::ResidualAdd { .. } => 5,
        }
    }

    /// Integer parameters serialized alongside the kind id.
    pub(crate) fn params(&self) -> Vec<u32> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![inputs as u32, outputs as u32],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => vec![in_channels as u32, out_channels as u32, kernel as u32],
            LayerSpec::Relu => vec![],
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => vec![channels as u32, height as u32, width as u32],
            LayerSpec::ResidualAdd { from } => vec![from as u32],
        }
    }

    pub(crate) fn from_parts(kind: u8, params: &[u32]) -> Result<Self> {
        let p = |i: usize| -> Result<usize> {
            params
                .get(i)
                .map(|&v| v as usize)
                .ok_or_else(|| NeuralError::Format(format!("layer kind {kind}: missing param {i}")))
        };
        let spec = match kind {
            1 => LayerSpec::Dense {
                inputs: p(0)?,
                outputs: p(1)?,
            },
            2 => LayerSpec::Conv2d {
                in_channels: p(0)?,
                out_channels: p(1)?,
                kernel: p(2)?,
            },
            3 => LayerSpec::Relu,
            4 => LayerSpec::Reshape {
                channels: p(0)?,
                height: p(1)?,
                width: p(2)?,
            },
            5 => LayerSpec::ResidualAdd { from: p(0)? },
            other => return Err(NeuralError::Format(format!("unknown layer kind id {other}"))),
        };
        Ok(spec)
    }

    pub(crate) fn param_count_of(kind: u8) -> usize {
        match kind {
            1 => 2,
            2 => 3,
            3 => 0,
            4 => 3,
            5 => 1,
            _ => 0,
        }
    }

    /// `(weight count, bias count)`.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Output shape for a given input shape; residual shape agreement is
    /// checked by the graph, which knows the earlier activations.
    pub fn output_dims(&self, index: usize, input: [usize; 3]) -> Result<[usize; 3]> {
        let mismatch = |expected: String| NeuralError::Shape {
            layer: index,
            kind: self.name(),
            expected,
            got: format!("{input:?}"),
        };
        let len: usize = input.iter().product();
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if len != inputs {
                    return Err(mismatch(format!("{inputs} flattened inputs")));
                }
                Ok([outputs, 1, 1])
            }
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                out_channels,
            } => {
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(mismatch(format!("odd kernel size, got {kernel}")));
                }
                if input[0] != in_channels {
                    return Err(mismatch(format!("{in_channels} input channels")));
                }
                Ok([out_channels, input[1], input[2]])
            }
            LayerSpec::Relu | LayerSpec::ResidualAdd { .. } => Ok(input),
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => {
                if channels * height * width != len {
                    return Err(mismatch(format!("{} elements", channels * height * width)));
                }
                Ok([channels, height, width])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_requires_odd_kernel() {
        let c = LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 2,
            kernel: 2,
        };
        assert!(c.output_dims(0, [2, 4, 4]).is_err());
    }

    #[test]
    fn params_round_trip_through_kind_id() {
        let specs = [
            LayerSpec::Dense {
                inputs: 3,
                outputs: 5,
            },
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 4,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::Reshape {
                channels: 1,
                height: 3,
                width: 5,
            },
            LayerSpec::ResidualAdd { from: 0 },
        ];
        for s in specs {
            let back = LayerSpec::from_parts(s.kind_id(), &s.params()).unwrap();
            assert_eq!(back, s);
            assert_eq!(LayerSpec::param_count_of(s.kind_id()), s.params().len());
        }
    }
}
