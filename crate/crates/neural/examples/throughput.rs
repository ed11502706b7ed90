use std::time::Instant;

use csikit_neural::{count_flops, mse, LayerSpec, ModelGraph, Tensor4};

fn main() {
    let width: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let depth = 8;
    let mut specs = vec![LayerSpec::Conv2d { in_channels: 2, out_channels: width, kernel: 3 }, LayerSpec::Relu];
    for _ in 0..depth - 2 {
        specs.push(LayerSpec::Conv2d { in_channels: width, out_channels: width, kernel: 3 });
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::Conv2d { in_channels: width, out_channels: 2, kernel: 3 });
    specs.push(LayerSpec::ResidualAdd { from: 0 });
    let m = ModelGraph::new([2, 16, 32], specs, 1).unwrap();
    let f = count_flops(&m).total;
    let x = Tensor4::from_vec([16, 2, 16, 32], (0..16 * 1024).map(|i| (i as f64).sin()).collect()).unwrap();
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let acts = m.forward_cached(&x).unwrap();
        let (_, g) = mse(acts.output(), &x);
        let _ = m.backward(&acts, &g).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    let per_sample = dt / (reps * 16) as f64;
    println!("fwd flops {f}, per-sample train step {:.3} ms, ~{:.2} GFLOPS (3x fwd)", per_sample * 1e3, 3.0 * f as f64 / per_sample / 1e9);
}
