use fieldrecon_core::nn::gradcheck::check_network;
use fieldrecon_core::nn::{conv_output_size, InitConfig, LayerSpec, Network, Padding};
use fieldrecon_core::rng::seeded;
use fieldrecon_core::Tensor;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_input(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn check(input_shape: &[usize], batch: usize, specs: &[LayerSpec], label: &str) {
    for seed in 0..20 {
        let mut rng = seeded(1000 + seed);
        let init = InitConfig {
            weight_std: 0.5,
            ..InitConfig::default()
        };
        let mut net = Network::new(input_shape, specs, &init, &mut rng).unwrap();
        let mut shape = vec![batch];
        shape.extend_from_slice(input_shape);
        let x = random_input(&shape, &mut rng);
        let report = check_network(&mut net, &x, H, &mut rng).unwrap();
        assert!(
            report.max_error() < TOL,
            "{label} seed {seed}: relative error {:e}",
            report.max_error()
        );
    }
}

#[test]
fn conv2d_same_and_strided() {
    check(&[2, 6, 5], 2, &[LayerSpec::conv(3, 3, 1, Padding::Same)], "conv same");
    check(&[1, 7, 8], 2, &[LayerSpec::conv(2, 3, 2, Padding::Same)], "conv stride 2");
    check(&[2, 6, 6], 1, &[LayerSpec::conv(2, 3, 1, Padding::Valid)], "conv valid");
}

#[test]
fn deconv2d() {
    check(&[2, 3, 4], 2, &[LayerSpec::deconv(2, 3, 2, None)], "deconv");
    check(&[2, 3, 3], 2, &[LayerSpec::deconv(1, 3, 2, Some((5, 6)))], "deconv pinned");
}

#[test]
fn maxpool2d() {
    check(&[2, 6, 6], 2, &[LayerSpec::max_pool((2, 2), (2, 2))], "pool 2");
    check(&[1, 7, 5], 2, &[LayerSpec::max_pool((3, 2), (2, 1))], "pool overlap");
}

#[test]
fn dense() {
    check(&[7], 3, &[LayerSpec::dense(4)], "dense");
    check(&[2, 3, 3], 2, &[LayerSpec::dense(3)], "dense flatten");
}

#[test]
fn batchnorm() {
    check(&[3, 2, 2], 4, &[LayerSpec::BatchNorm], "bn spatial");
    check(&[5], 6, &[LayerSpec::BatchNorm], "bn features");
}

#[test]
fn activations_and_reshape() {
    check(&[10], 2, &[LayerSpec::relu()], "relu");
    check(&[10], 2, &[LayerSpec::lrelu(0.2)], "lrelu");
    check(&[12], 2, &[LayerSpec::reshape(&[3, 2, 2]), LayerSpec::dense(2)], "reshape");
}

#[test]
fn stacked_network() {
    let specs = [
        LayerSpec::conv(3, 3, 1, Padding::Same),
        LayerSpec::lrelu(0.2),
        LayerSpec::max_pool((2, 2), (2, 2)),
        LayerSpec::conv(2, 3, 2, Padding::Same),
        LayerSpec::BatchNorm,
        LayerSpec::relu(),
        LayerSpec::dense(5),
        LayerSpec::reshape(&[1, 1, 5]),
        LayerSpec::Deconv2d {
            out_channels: 1,
            kernel: (2, 2),
            stride: (1, 1),
            padding: Padding::Valid,
            output: None,
        },
    ];
    check(&[1, 8, 8], 3, &specs, "stack");
}

// Independent straight-line evaluation of conv -> relu -> pool -> dense.
fn naive_conv_same(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], b: &[f64], oc: usize, k: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut y = vec![0.0; oc * h * w];
    for o in 0..oc {
        for r in 0..h {
            for s in 0..w {
                let mut acc = b[o];
                for ci in 0..c {
                    for dr in 0..k {
                        for ds in 0..k {
                            let (ir, is) = (r as isize + dr as isize - pad as isize, s as isize + ds as isize - pad as isize);
                            if ir < 0 || is < 0 || ir >= h as isize || is >= w as isize {
                                continue;
                            }
                            acc += wt[((o * c + ci) * k + dr) * k + ds] * x[(ci * h + ir as usize) * w + is as usize];
                        }
                    }
                }
                y[(o * h + r) * w + s] = acc;
            }
        }
    }
    y
}

#[test]
fn forward_matches_straight_line_recomputation() {
    let specs = [
        LayerSpec::conv(3, 3, 1, Padding::Same),
        LayerSpec::relu(),
        LayerSpec::max_pool((2, 2), (2, 2)),
        LayerSpec::dense(4),
    ];
    for seed in 0..5 {
        let mut rng = seeded(seed);
        let mut net = Network::new(&[2, 6, 6], &specs, &InitConfig::default(), &mut rng).unwrap();
        let x = random_input(&[1, 2, 6, 6], &mut rng);
        let y = net.forward(&x).unwrap();
        let s = net.store();
        let conv = naive_conv_same(x.data(), 2, 6, 6, s.get(0).value.data(), s.get(1).value.data(), 3, 3);
        let act: Vec<f64> = conv.iter().map(|v| v.max(0.0)).collect();
        let mut pooled = vec![0.0; 3 * 3 * 3];
        for c in 0..3 {
            for r in 0..3 {
                for q in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for dr in 0..2 {
                        for dq in 0..2 {
                            m = m.max(act[(c * 6 + 2 * r + dr) * 6 + 2 * q + dq]);
                        }
                    }
                    pooled[(c * 3 + r) * 3 + q] = m;
                }
            }
        }
        let (w, b) = (s.get(2).value.data(), s.get(3).value.data());
        for o in 0..4 {
            let expected: f64 = b[o] + (0..27).map(|i| w[o * 27 + i] * pooled[i]).sum::<f64>();
            assert!((y.data()[o] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let specs = [LayerSpec::conv(4, 3, 1, Padding::Same), LayerSpec::BatchNorm, LayerSpec::dense(2)];
    let mut rng = seeded(5);
    let x = random_input(&[3, 1, 5, 5], &mut rng);
    let mut a = Network::new(&[1, 5, 5], &specs, &InitConfig::default(), &mut seeded(9)).unwrap();
    let mut b = Network::new(&[1, 5, 5], &specs, &InitConfig::default(), &mut seeded(9)).unwrap();
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
}

#[test]
fn conv_shape_formula_matches_realized_shape() {
    for h in 1..=9 {
        for k in 1..=4 {
            for s in 1..=3 {
                for padding in [Padding::Same, Padding::Valid] {
                    let declared = conv_output_size(h, k, s, padding);
                    let built = Network::new(
                        &[1, h, h],
                        &[LayerSpec::conv(2, k, s, padding)],
                        &InitConfig::default(),
                        &mut seeded(0),
                    );
                    match (declared, built) {
                        (Some(o), Ok(mut net)) => {
                            assert_eq!(net.output_shape(), &[2, o, o]);
                            let y = net.forward(&Tensor::zeros(&[1, 1, h, h])).unwrap();
                            assert_eq!(y.shape(), &[1, 2, o, o]);
                        }
                        (None, Err(_)) => {}
                        (d, b) => panic!("h={h} k={k} s={s} {padding:?}: declared {d:?}, built ok={}", b.is_ok()),
                    }
                }
            }
        }
    }
}

#[test]
fn maxpool_routes_gradient_to_argmax_only() {
    let mut rng = seeded(77);
    for _ in 0..50 {
        let mut net = Network::new(
            &[1, 4, 4],
            &[LayerSpec::max_pool((2, 2), (2, 2))],
            &InitConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = random_input(&[1, 1, 4, 4], &mut rng);
        net.forward(&x).unwrap();
        let dy = Tensor::from_fn(&[1, 1, 2, 2], |i| i as f64 + 1.0);
        let dx = net.backward(&dy).unwrap().input.unwrap();
        // brute force: locate each window's maximum
        let mut expected = [0.0; 16];
        for wr in 0..2 {
            for wc in 0..2 {
                let mut best = (f64::NEG_INFINITY, 0);
                for r in 0..2 {
                    for c in 0..2 {
                        let idx = (2 * wr + r) * 4 + 2 * wc + c;
                        if x.data()[idx] > best.0 {
                            best = (x.data()[idx], idx);
                        }
                    }
                }
                expected[best.1] = dy.data()[wr * 2 + wc];
            }
        }
        assert_eq!(dx.data(), &expected);
    }
}
