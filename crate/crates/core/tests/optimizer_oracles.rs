//! Adam and RMSProp against independent scalar recomputations.

use fieldrecon_core::nn::{Gradients, Param, ParamKind, ParamStore};
use fieldrecon_core::optim::{adam_step, rmsprop_step, BiasCorrection, OptimizerConfig};
use fieldrecon_core::rng::seeded;
use fieldrecon_core::Tensor;
use rand::Rng;

fn single(theta: f64, s: f64, r: f64) -> ParamStore {
    let mut p = Param::new("x".into(), ParamKind::Weight, Tensor::scalar(theta));
    p.s = Tensor::scalar(s);
    p.r = Tensor::scalar(r);
    ParamStore::new(vec![p])
}

fn grad(g: f64) -> Gradients {
    Gradients {
        params: vec![Tensor::scalar(g)],
        input: None,
    }
}

/// Scalar spreadsheet-style Adam: returns (theta, s, r) after one step.
fn adam_scalar(theta: f64, s: f64, r: f64, g: f64, lr: f64, t: i32) -> (f64, f64, f64) {
    let (rho1, rho2, delta) = (0.9_f64, 0.999_f64, 1e-8);
    let s1 = rho1 * s + (1.0 - rho1) * g;
    let r1 = rho2 * r + (1.0 - rho2) * g * g;
    let s_hat = s1 / (1.0 - rho1.powi(t));
    let r_hat = r1 / (1.0 - rho2.powi(t));
    (theta - lr * s_hat / (r_hat + delta).sqrt(), s1, r1)
}

fn rmsprop_scalar(theta: f64, r: f64, g: f64, lr: f64, rho: f64) -> (f64, f64) {
    let r1 = rho * r + (1.0 - rho) * g * g;
    (theta - lr / (1e-8 + r1.sqrt()) * g, r1)
}

#[test]
fn adam_two_steps_constant_gradient() {
    let cfg = OptimizerConfig::adam(0.01);
    let mut store = single(0.5, 0.0, 0.0);
    let (mut th, mut s, mut r) = (0.5, 0.0, 0.0);
    for t in 1..=2 {
        adam_step(&mut store, &grad(0.7), &cfg, t as u64).unwrap();
        (th, s, r) = adam_scalar(th, s, r, 0.7, 0.01, t);
    }
    assert!((store.get(0).value.data()[0] - th).abs() < 1e-12);
}

#[test]
fn adam_random_cases() {
    let mut rng = seeded(2024);
    for _ in 0..100 {
        let (theta, s, r) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let g = rng.random_range(-3.0..3.0);
        let lr = rng.random_range(1e-4..0.1);
        let t = rng.random_range(1..200);
        let mut store = single(theta, s, r);
        adam_step(&mut store, &grad(g), &OptimizerConfig::adam(lr), t as u64).unwrap();
        let (e_theta, e_s, e_r) = adam_scalar(theta, s, r, g, lr, t);
        let p = store.get(0);
        assert!((p.value.data()[0] - e_theta).abs() < 1e-12);
        assert!((p.s.data()[0] - e_s).abs() < 1e-12);
        assert!((p.r.data()[0] - e_r).abs() < 1e-12);
    }
}

#[test]
fn adam_literal_bias_correction_is_constant() {
    let mut cfg = OptimizerConfig::adam(0.01);
    cfg.bias_correction = BiasCorrection::Literal;
    let mut a = single(0.0, 0.2, 0.3);
    let mut b = single(0.0, 0.2, 0.3);
    adam_step(&mut a, &grad(0.5), &cfg, 1).unwrap();
    adam_step(&mut b, &grad(0.5), &cfg, 500).unwrap();
    assert_eq!(a.get(0).value.data(), b.get(0).value.data());
    let s1 = 0.9 * 0.2 + 0.1 * 0.5;
    let r1 = 0.999 * 0.3 + 0.001 * 0.25;
    let expected = -0.01 * (s1 / 0.1) / (r1 / 0.001 + 1e-8_f64).sqrt();
    assert!((a.get(0).value.data()[0] - expected).abs() < 1e-12);
}

#[test]
fn rmsprop_random_cases() {
    let mut rng = seeded(99);
    for _ in 0..100 {
        let (theta, r) = (rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0));
        let g = rng.random_range(-3.0..3.0);
        let lr = rng.random_range(1e-5..0.01);
        let mut store = single(theta, 0.0, r);
        rmsprop_step(&mut store, &grad(g), &OptimizerConfig::rmsprop(lr)).unwrap();
        let (e_theta, e_r) = rmsprop_scalar(theta, r, g, lr, 0.9);
        assert!((store.get(0).value.data()[0] - e_theta).abs() < 1e-12);
        assert!((store.get(0).r.data()[0] - e_r).abs() < 1e-12);
    }
}
