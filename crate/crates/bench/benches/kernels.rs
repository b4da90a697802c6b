use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fieldrecon_core::nn::{InitConfig, LayerSpec, Network, Padding};
use fieldrecon_core::reconstruct::{lagrange_eval, piecewise_interpolate};
use fieldrecon_core::rng;
use fieldrecon_core::topopt::{fe_solve, TopOptConfig};
use fieldrecon_core::Tensor;

/// One CIC tile batch: 50 tiles of 20x24, 5x5 kernels, 32 channels.
fn conv(c: &mut Criterion) {
    let mut rng = rng::seeded(1);
    let specs = [LayerSpec::conv(32, 5, 1, Padding::Same)];
    let mut net = Network::new(&[1, 20, 24], &specs, &InitConfig::default(), &mut rng).unwrap();
    let x = Tensor::from_fn(&[50, 1, 20, 24], |i| (i as f64 * 0.37).sin());
    c.bench_function("conv_forward", |b| b.iter(|| net.infer(black_box(&x)).unwrap()));
    let dy = Tensor::full(&[50, 32, 20, 24], 1e-3);
    c.bench_function("conv_forward_backward", |b| {
        b.iter(|| {
            net.forward(black_box(&x)).unwrap();
            net.backward(&dy).unwrap()
        })
    });
}

fn fe(c: &mut Criterion) {
    let cfg = TopOptConfig::default();
    let x = vec![cfg.volfrac; cfg.elements()];
    c.bench_function("fe_solve_60x20", |b| b.iter(|| fe_solve(&cfg, black_box(&x)).unwrap()));
}

fn interpolation(c: &mut Criterion) {
    let nodes: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, (i as f64 * 0.3).exp())).collect();
    let points: Vec<(f64, f64)> = (0..200).map(|i| (i as f64, (i as f64 * 0.01).exp())).collect();
    c.bench_function("lagrange_global_12", |b| b.iter(|| lagrange_eval(&nodes, black_box(5.5)).unwrap()));
    c.bench_function("piecewise_200", |b| {
        b.iter(|| piecewise_interpolate(&points, black_box(123.4)).unwrap())
    });
}

criterion_group!(benches, conv, fe, interpolation);
criterion_main!(benches);
