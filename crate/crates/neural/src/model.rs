use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{NeuralError, Result};
use crate::layer::LayerSpec;
use crate::tensor::Tensor4;

/// A layer together with its trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Dense: `outputs × inputs`. Conv: `out × in × k × k`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// An ordered stack of layers with a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_dims: [usize; 3],
    layers: Vec<Layer>,
    /// `dims[i]` is the shape entering layer `i`; the last entry is the output.
    dims: Vec<[usize; 3]>,
}

/// Cached forward activations for a contiguous range of layers.
#[derive(Debug, Clone)]
pub struct Activations {
    start: usize,
    /// `values[j]` entered layer `start + j`; the last one is the range output.
    values: Vec<Tensor4>,
}

impl Activations {
    pub fn output(&self) -> &Tensor4 {
        self.values.last().expect("activations are never empty")
    }

    pub fn input(&self) -> &Tensor4 {
        &self.values[0]
    }

    /// Activation entering absolute layer index `layer`.
    pub fn at(&self, layer: usize) -> &Tensor4 {
        &self.values[layer - self.start]
    }
}

/// Parameter gradients, one entry per layer (empty for parameter-free kinds).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelGraph) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl ModelGraph {
    /// Builds a model with seeded fan-in scaled Gaussian weights and zero biases.
    pub fn new(input_dims: [usize; 3], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (nw, nb) = spec.weight_shape();
                let weights = if nw > 0 {
                    let std = (2.0 / spec.fan_in() as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    (0..nw).map(|_| normal.sample(&mut rng)).collect()
                } else {
                    Vec::new()
                };
                Layer {
                    spec,
                    weights,
                    bias: vec![0.0; nb],
                }
            })
            .collect();
        Self::from_layers(input_dims, layers)
    }

    /// Assembles a model from explicit layers, validating every shape.
    pub fn from_layers(input_dims: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NeuralError::InvalidModel("model has no layers".into()));
        }
        let mut dims = vec![input_dims];
        for (i, layer) in layers.iter().enumerate() {
            let (nw, nb) = layer.spec.weight_shape();
            if layer.weights.len() != nw || layer.bias.len() != nb {
                return Err(NeuralError::InvalidModel(format!(
                    "layer {i} ({}) expects {nw}+{nb} parameters, has {}+{}",
                    layer.spec.name(),
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            if let LayerSpec::ResidualAdd { from } = layer.spec {
                if from > i || dims[from] != dims[i] {
                    return Err(NeuralError::Shape {
                        layer: i,
                        kind: "residual_add",
                        expected: format!("{:?}", dims.get(from)),
                        got: format!("{:?}", dims[i]),
                    });
                }
            }
            let out = layer.spec.output_dims(i, dims[i])?;
            dims.push(out);
        }
        Ok(Self {
            input_dims,
            layers,
            dims,
        })
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn output_dims(&self) -> [usize; 3] {
        *self.dims.last().expect("non-empty")
    }

    /// Shape entering layer `i` (`i = len()` gives the output shape).
    pub fn dims_at(&self, i: usize) -> [usize; 3] {
        self.dims[i]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// True when the final layer adds the network input back to the output.
    pub fn global_residual(&self) -> bool {
        matches!(
            self.layers.last().map(|l| &l.spec),
            Some(LayerSpec::ResidualAdd { from: 0 })
        )
    }

    /// Sets a layer's weights and biases to zero.
    pub fn zero_layer(&mut self, i: usize) {
        let layer = &mut self.layers[i];
        layer.weights.iter_mut().for_each(|w| *w = 0.0);
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward_range(x, 0, self.len())
    }

    /// Runs layers `start..end` only. Residual links must stay inside the range.
    pub fn forward_range(&self, x: &Tensor4, start: usize, end: usize) -> Result<Tensor4> {
        let acts = self.run(x.clone(), start, end, None)?;
        Ok(acts.values.into_iter().last().expect("non-empty"))
    }

    pub fn forward_cached(&self, x: &Tensor4) -> Result<Activations> {
        self.run(x.clone(), 0, self.len(), None)
    }

    /// Forward pass that perturbs the activation leaving layer `after` via `noise`.
    pub fn forward_cached_with_noise(
        &self,
        x: &Tensor4,
        after: usize,
        noise: &mut dyn FnMut(&mut Tensor4),
    ) -> Result<Activations> {
        self.run(x.clone(), 0, self.len(), Some((after, noise)))
    }

    fn run(
        &self,
        x: Tensor4,
        start: usize,
        end: usize,
        mut noise: Option<(usize, &mut dyn FnMut(&mut Tensor4))>,
    ) -> Result<Activations> {
        if start >= end || end > self.len() {
            return Err(NeuralError::InvalidModel(format!(
                "layer range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        if x.sample_dims() != self.dims[start] {
            return Err(NeuralError::Shape {
                layer: start,
                kind: self.layers[start].spec.name(),
                expected: format!("{:?}", self.dims[start]),
                got: format!("{:?}", x.sample_dims()),
            });
        }
        let mut values = Vec::with_capacity(end - start + 1);
        values.push(x);
        for i in start..end {
            let layer = &self.layers[i];
            let input = values.last().expect("non-empty");
            let mut out = match layer.spec {
                LayerSpec::Dense { inputs, outputs } => dense_forward(layer, input, inputs, outputs),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => conv_forward(layer, input, in_channels, out_channels, kernel),
                LayerSpec::Relu => {
                    let mut out = input.clone();
                    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    out
                }
                LayerSpec::Reshape {
                    channels,
                    height,
                    width,
                } => input.clone().reshaped([channels, height, width])?,
                LayerSpec::ResidualAdd { from } => {
                    if from < start {
                        return Err(NeuralError::InvalidModel(format!(
                            "layer {i} skips back to {from}, outside range starting at {start}"
                        )));
                    }
                    let skip = &values[from - start];
                    let mut out = input.clone();
                    out.data_mut()
                        .iter_mut()
                        .zip(skip.data())
                        .for_each(|(o, s)| *o += s);
                    out
                }
            };
            if let Some((after, f)) = noise.as_mut() {
                if *after == i {
                    f(&mut out);
                }
            }
            values.push(out);
        }
        Ok(Activations { start, values })
    }

    /// Reverse-mode pass over the range cached in `acts`.
    ///
    /// Returns parameter gradients (summed over the batch, zero outside the
    /// range) and the gradient with respect to the range input.
    pub fn backward(&self, acts: &Activations, grad_out: &Tensor4) -> Result<(Gradients, Tensor4)> {
        let start = acts.start;
        let end = start + acts.values.len() - 1;
        if grad_out.dims() != acts.output().dims() {
            return Err(NeuralError::Shape {
                layer: end - 1,
                kind: self.layers[end - 1].spec.name(),
                expected: format!("{:?}", acts.output().dims()),
                got: format!("{:?}", grad_out.dims()),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut pending: BTreeMap<usize, Tensor4> = BTreeMap::new();
        let mut g = grad_out.clone();
        for i in (start..end).rev() {
            let layer = &self.layers[i];
            let input = &acts.values[i - start];
            let mut g_in = match layer.spec {
                LayerSpec::Dense { inputs, outputs } => {
                    let (dw, db, dx) = dense_backward(layer, input, &g, inputs, outputs);
                    grads.weights[i] = dw;
                    grads.bias[i] = db;
                    dx
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (dw, db, dx) =
                        conv_backward(layer, input, &g, in_channels, out_channels, kernel);
                    grads.weights[i] = dw;
                    grads.bias[i] = db;
                    dx
                }
                LayerSpec::Relu => {
                    let mut dx = g;
                    dx.data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .for_each(|(d, &x)| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    dx
                }
                LayerSpec::Reshape { .. } => g.reshaped(input.sample_dims())?,
                LayerSpec::ResidualAdd { from } => {
                    match pending.get_mut(&from) {
                        Some(p) => p
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(from, g.clone());
                        }
                    }
                    g
                }
            };
            if let Some(p) = pending.remove(&i) {
                g_in.data_mut()
                    .iter_mut()
                    .zip(p.data())
                    .for_each(|(a, b)| *a += b);
            }
            g = g_in;
        }
        Ok((grads, g))
    }
}

fn view2(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer sized to shape")
}

fn view2_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer sized to shape")
}

fn dense_forward(layer: &Layer, x: &Tensor4, inputs: usize, outputs: usize) -> Tensor4 {
    let n = x.batch();
    let mut out = Tensor4::zeros([n, outputs, 1, 1]);
    {
        let xv = view2(x.data(), n, inputs);
        let wv = view2(&layer.weights, outputs, inputs);
        let mut yv = view2_mut(out.data_mut(), n, outputs);
        general_mat_mul(1.0, &xv, &wv.t(), 0.0, &mut yv);
    }
    for row in out.data_mut().chunks_mut(outputs) {
        row.iter_mut().zip(&layer.bias).for_each(|(y, b)| *y += b);
    }
    out
}

fn dense_backward(
    layer: &Layer,
    x: &Tensor4,
    g: &Tensor4,
    inputs: usize,
    outputs: usize,
) -> (Vec<f64>, Vec<f64>, Tensor4) {
    let n = x.batch();
    let xv = view2(x.data(), n, inputs);
    let gv = view2(g.data(), n, outputs);
    let mut dw = vec![0.0; outputs * inputs];
    general_mat_mul(1.0, &gv.t(), &xv, 0.0, &mut view2_mut(&mut dw, outputs, inputs));
    let mut db = vec![0.0; outputs];
    for row in g.data().chunks(outputs) {
        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
    }
    let mut dx = Tensor4::zeros(x.dims());
    {
        let wv = view2(&layer.weights, outputs, inputs);
        let mut dxv = view2_mut(dx.data_mut(), n, inputs);
        general_mat_mul(1.0, &gv, &wv, 0.0, &mut dxv);
    }
    (dw, db, dx)
}

/// Unfolds one `c × h × w` sample into a `(c·k·k) × (h·w)` patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let shift = kx as isize - pad as isize;
                    for xo in 0..w {
                        let sx = xo as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            dst[xo] = src[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let shift = kx as isize - pad as isize;
                    for xo in 0..w {
                        let sx = xo as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += src[xo];
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward(layer: &Layer, x: &Tensor4, cin: usize, cout: usize, k: usize) -> Tensor4 {
    let [n, _, h, w] = x.dims();
    let hw = h * w;
    let ckk = cin * k * k;
    let samples: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let cols = im2col(x.sample(s), cin, h, w, k);
            let mut y = vec![0.0; cout * hw];
            general_mat_mul(
                1.0,
                &view2(&layer.weights, cout, ckk),
                &view2(&cols, ckk, hw),
                0.0,
                &mut view2_mut(&mut y, cout, hw),
            );
            for (o, plane) in y.chunks_mut(hw).enumerate() {
                let b = layer.bias[o];
                plane.iter_mut().for_each(|v| *v += b);
            }
            y
        })
        .collect();
    Tensor4::from_vec([n, cout, h, w], samples.concat()).expect("conv output sized")
}

fn conv_backward(
    layer: &Layer,
    x: &Tensor4,
    g: &Tensor4,
    cin: usize,
    cout: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Tensor4) {
    let [n, _, h, w] = x.dims();
    let hw = h * w;
    let ckk = cin * k * k;
    let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let cols = im2col(x.sample(s), cin, h, w, k);
            let gs = view2(g.sample(s), cout, hw);
            let mut dw = vec![0.0; cout * ckk];
            general_mat_mul(
                1.0,
                &gs,
                &view2(&cols, ckk, hw).t(),
                0.0,
                &mut view2_mut(&mut dw, cout, ckk),
            );
            let db: Vec<f64> = g.sample(s).chunks(hw).map(|p| p.iter().sum()).collect();
            let mut dcols = vec![0.0; ckk * hw];
            general_mat_mul(
                1.0,
                &view2(&layer.weights, cout, ckk).t(),
                &gs,
                0.0,
                &mut view2_mut(&mut dcols, ckk, hw),
            );
            (dw, db, col2im(&dcols, cin, h, w, k))
        })
        .collect();
    // Fixed-order reduction keeps the sum independent of the worker count.
    let mut dw = vec![0.0; cout * ckk];
    let mut db = vec![0.0; cout];
    let mut dx = Vec::with_capacity(x.data().len());
    for (sw, sb, sx) in per_sample {
        dw.iter_mut().zip(&sw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&sb).for_each(|(a, b)| *a += b);
        dx.extend_from_slice(&sx);
    }
    (dw, db, Tensor4::from_vec(x.dims(), dx).expect("sized"))
}
