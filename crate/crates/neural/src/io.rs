//! Weight file format.
//!
//! ```text
//! magic   "AIW1"
//! u32     layer count
//! per layer:
//!   u8    kind id (1 dense, 2 conv2d, 3 relu, 4 reshape, 5 residual add)
//!   u32[] kind parameters (dense: in,out; conv: in,out,k; reshape: c,h,w; residual: from)
//!   f64[] weights then biases, sizes implied by the parameters
//! u32     JSON length, then UTF-8 JSON {"input_dims": [c,h,w], "config": ...}
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use serde_json::{json, Value};

use crate::error::{NeuralError, Result};
use crate::layer::LayerSpec;
use crate::model::{Layer, ModelGraph};

pub const WEIGHT_MAGIC: &[u8; 4] = b"AIW1";

pub fn write_model<W: Write>(mut w: W, model: &ModelGraph, config: &Value) -> Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&(model.len() as u32).to_le_bytes())?;
    for layer in model.layers() {
        w.write_all(&[layer.spec.kind_id()])?;
        for p in layer.spec.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        for v in layer.weights.iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let meta = json!({ "input_dims": model.input_dims(), "config": config });
    let bytes = serde_json::to_vec(&meta).map_err(|e| NeuralError::Format(e.to_string()))?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Reads a model and the caller's config JSON stored with it.
pub fn read_model<R: Read>(mut r: R) -> Result<(ModelGraph, Value)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(NeuralError::Format(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let nparams = LayerSpec::param_count_of(kind[0]);
        let params = (0..nparams)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let spec = LayerSpec::from_parts(kind[0], &params)?;
        let (nw, nb) = spec.weight_shape();
        let weights = read_f64s(&mut r, nw)?;
        let bias = read_f64s(&mut r, nb)?;
        layers.push(Layer { spec, weights, bias });
    }
    let len = read_u32(&mut r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let meta: Value = serde_json::from_slice(&buf).map_err(|e| NeuralError::Format(e.to_string()))?;
    let dims: [usize; 3] = serde_json::from_value(meta["input_dims"].clone())
        .map_err(|e| NeuralError::Format(format!("input_dims: {e}")))?;
    let model = ModelGraph::from_layers(dims, layers)?;
    Ok((model, meta["config"].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let model = ModelGraph::new(
            [2, 3, 4],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Reshape {
                    channels: 36,
                    height: 1,
                    width: 1,
                },
                LayerSpec::Dense {
                    inputs: 36,
                    outputs: 24,
                },
                LayerSpec::Reshape {
                    channels: 2,
                    height: 3,
                    width: 4,
                },
                LayerSpec::ResidualAdd { from: 0 },
            ],
            7,
        )
        .unwrap();
        let cfg = json!({"scheme": "rx", "latent": 12});
        let mut buf = Vec::new();
        write_model(&mut buf, &model, &cfg).unwrap();
        let (back, back_cfg) = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_model(&b"AIW0\0\0\0\0"[..]).is_err());
        let model = ModelGraph::new([1, 1, 1], vec![LayerSpec::Relu], 0).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model, &Value::Null).unwrap();
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
    }
}
