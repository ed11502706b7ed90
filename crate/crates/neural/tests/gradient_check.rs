//! Central finite-difference checks of every layer's backward pass.

use csikit_neural::{LayerSpec, ModelGraph, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    let n = dims.iter().product();
    // Keep values away from the ReLU kink so central differences stay smooth.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor4::from_vec(dims, data).unwrap()
}

/// Scalar objective `sum(out ⊙ proj)`, whose gradient w.r.t. `out` is `proj`.
fn objective(model: &ModelGraph, x: &Tensor4, proj: &Tensor4) -> f64 {
    let y = model.forward(x).unwrap();
    y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

/// Returns the worst relative error over every weight, bias and input entry.
fn check(model: &ModelGraph, batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = model.input_dims();
    let x = random_tensor([batch, c, h, w], &mut rng);
    let [oc, oh, ow] = model.output_dims();
    let proj = random_tensor([batch, oc, oh, ow], &mut rng);
    let acts = model.forward_cached(&x).unwrap();
    let (grads, gin) = model.backward(&acts, &proj).unwrap();

    let mut worst = 0.0f64;
    for li in 0..model.len() {
        for which in 0..2 {
            let len = if which == 0 {
                model.layers()[li].weights.len()
            } else {
                model.layers()[li].bias.len()
            };
            for pi in 0..len {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let (p, m) = if which == 0 {
                    (
                        &mut plus.layers_mut()[li].weights[pi],
                        &mut minus.layers_mut()[li].weights[pi],
                    )
                } else {
                    (
                        &mut plus.layers_mut()[li].bias[pi],
                        &mut minus.layers_mut()[li].bias[pi],
                    )
                };
                *p += EPS;
                *m -= EPS;
                let numeric = (objective(&plus, &x, &proj) - objective(&minus, &x, &proj)) / (2.0 * EPS);
                let analytic = if which == 0 {
                    grads.weights[li][pi]
                } else {
                    grads.bias[li][pi]
                };
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    for i in 0..x.data().len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.data_mut()[i] += EPS;
        xm.data_mut()[i] -= EPS;
        let numeric = (objective(model, &xp, &proj) - objective(model, &xm, &proj)) / (2.0 * EPS);
        worst = worst.max(rel_err(gin.data()[i], numeric));
    }
    worst
}

fn conv(cin: usize, cout: usize, k: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
    }
}

#[test]
fn dense_layer() {
    let m = ModelGraph::new(
        [2, 2, 3],
        vec![LayerSpec::Dense {
            inputs: 12,
            outputs: 5,
        }],
        1,
    )
    .unwrap();
    assert!(check(&m, 3, 10) < TOL);
}

#[test]
fn conv_layer() {
    for k in [1, 3, 5] {
        let m = ModelGraph::new([2, 4, 5], vec![conv(2, 3, k)], 2).unwrap();
        let e = check(&m, 2, 11);
        assert!(e < TOL, "kernel {k}: {e}");
    }
}

#[test]
fn relu_layer() {
    let m = ModelGraph::new([3, 2, 2], vec![LayerSpec::Relu], 0).unwrap();
    assert!(check(&m, 2, 12) < TOL);
}

#[test]
fn reshape_layer() {
    let m = ModelGraph::new(
        [2, 3, 2],
        vec![
            LayerSpec::Reshape {
                channels: 1,
                height: 4,
                width: 3,
            },
            conv(1, 2, 3),
        ],
        3,
    )
    .unwrap();
    assert!(check(&m, 2, 13) < TOL);
}

#[test]
fn residual_add_layer() {
    let m = ModelGraph::new(
        [2, 3, 4],
        vec![conv(2, 3, 3), LayerSpec::Relu, conv(3, 2, 3), LayerSpec::ResidualAdd { from: 0 }],
        4,
    )
    .unwrap();
    assert!(check(&m, 2, 14) < TOL);
}

#[test]
fn inner_residual_after_dense_expansion() {
    let m = ModelGraph::new(
        [3, 1, 1],
        vec![
            LayerSpec::Dense {
                inputs: 3,
                outputs: 12,
            },
            LayerSpec::Reshape {
                channels: 2,
                height: 2,
                width: 3,
            },
            conv(2, 2, 3),
            LayerSpec::Relu,
            conv(2, 2, 3),
            LayerSpec::ResidualAdd { from: 2 },
        ],
        5,
    )
    .unwrap();
    assert!(check(&m, 2, 15) < TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Random three-layer stacks mixing every parameterised kind.
    #[test]
    fn random_three_layer_stacks(kinds in prop::collection::vec(0u8..4, 3), seed in 0u64..1000) {
        let (c, h, w) = (2usize, 3usize, 3usize);
        let mut specs = Vec::new();
        let mut cur = [c, h, w];
        for k in kinds {
            let spec = match k {
                0 => conv(cur[0], 2, 3),
                1 => LayerSpec::Relu,
                2 => LayerSpec::Dense { inputs: cur.iter().product(), outputs: 18 },
                _ => LayerSpec::Reshape { channels: 2, height: cur.iter().product::<usize>() / 2, width: 1 },
            };
            cur = spec.output_dims(specs.len(), cur).unwrap();
            if matches!(spec, LayerSpec::Dense { .. }) {
                // back to an image so a following conv is valid
                specs.push(spec);
                let r = LayerSpec::Reshape { channels: 2, height: 3, width: 3 };
                cur = r.output_dims(specs.len(), cur).unwrap();
                specs.push(r);
                continue;
            }
            specs.push(spec);
        }
        let m = ModelGraph::new([c, h, w], specs, seed).unwrap();
        let e = check(&m, 2, seed + 1);
        prop_assert!(e < TOL, "worst relative error {}", e);
    }
}
