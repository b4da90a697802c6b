use fieldrecon_core::cic::{
    self, assemble_tiles, check_regressor, load_regressor, partition_image, predict, train, weight_histograms,
    BaselineCnn, BaselineConfig, CicConfig, CicModel, FrameRegressor, MemoryTelemetry, NullTelemetry, TrainConfig,
};
use fieldrecon_core::dataset::{denormalize, NormKind};
use fieldrecon_core::nn::{Gradients, InitConfig, ParamKind};
use fieldrecon_core::optim::OptimizerConfig;
use fieldrecon_core::rng::seeded;
use fieldrecon_core::topopt::{self, RenderConfig, TopOptConfig};
use fieldrecon_core::{Error, Frame, FrameDataset, GrayImage, Tensor};
use rand::Rng;

/// Deep ReLU/max-pool stacks put a kink within 1e-5 of some parameter for
/// a few seeds, while 1e-6 loses digits on small gradients. Each seed is
/// judged at whichever of the two steps lands on smooth ground.
fn fd_error(model: &mut dyn FrameRegressor, x: &Tensor, rng: &mut impl Rng) -> f64 {
    [1e-5, 1e-6]
        .iter()
        .map(|&h| check_regressor(model, x, h, rng).unwrap().max_error())
        .fold(f64::INFINITY, f64::min)
}

fn mini_config() -> CicConfig {
    CicConfig {
        grid_rows: 2,
        grid_cols: 2,
        sub_height: 8,
        sub_width: 8,
        channels: [2, 2],
        kernel: 3,
        fusion_channels: 2,
    }
}

fn wide_init() -> InitConfig {
    InitConfig {
        weight_std: 0.5,
        ..InitConfig::default()
    }
}

/// A few frames from a short MBB run at the desk resolution.
fn desk_frames(iters: usize) -> Vec<Frame> {
    let cfg = TopOptConfig {
        max_iters: iters,
        ..TopOptConfig::default()
    };
    topopt::run(&cfg, &RenderConfig::default()).unwrap().frames
}

fn params_snapshot(model: &dyn FrameRegressor) -> Vec<Vec<f64>> {
    model
        .networks()
        .iter()
        .flat_map(|(_, n)| n.store().iter().map(|p| p.value.data().to_vec()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn partition_small_grid_is_row_major() {
    let frame = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let tiles = partition_image(&frame, 2, 2).unwrap();
    let values: Vec<f64> = tiles.iter().map(|t| t.data()[0]).collect();
    assert_eq!(values, vec![1.0, 2.0, 3.0, 4.0]);
    assert!(tiles.iter().all(|t| t.shape() == [1, 1, 1]));
}

#[test]
fn partition_large_grid_and_reassembly() {
    let mut rng = seeded(3);
    let frame = Tensor::from_fn(&[1, 117, 390], |_| rng.random());
    let tiles = partition_image(&frame, 3, 10).unwrap();
    assert_eq!(tiles.len(), 30);
    assert!(tiles.iter().all(|t| t.shape() == [1, 39, 39]));
    assert_eq!(assemble_tiles(&tiles, 3, 10).unwrap(), frame);
}

#[test]
fn partition_rejects_non_tiling_shapes() {
    let frame = Tensor::zeros(&[1, 7, 10]);
    match partition_image(&frame, 2, 5) {
        Err(Error::Config(msg)) => assert!(msg.contains("divisible"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn large_preset_conv_parameter_count() {
    let cfg = CicConfig::full_scale();
    let model = CicModel::new(&cfg, &InitConfig::default(), &mut seeded(0)).unwrap();
    let first_conv: usize = (0..cfg.tiles())
        .map(|t| {
            let net = model.subnet(t);
            let (_, range) = net.layer_params().into_iter().find(|(_, r)| !r.is_empty()).unwrap();
            range.map(|i| net.store().get(i).value.len()).sum::<usize>()
        })
        .sum();
    assert_eq!(first_conv, 30 * (5 * 5 * 1 * 32 + 32));
    assert_eq!(model.frame_shape(), (117, 390));
}

#[test]
fn miniature_cic_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = seeded(500 + seed);
        let mut model = CicModel::new(&mini_config(), &wide_init(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 1, 16, 16], |_| rng.random());
        let err = fd_error(&mut model, &x, &mut rng);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn baseline_gradients_match_finite_differences() {
    let cfg = BaselineConfig {
        frame_height: 8,
        frame_width: 12,
        channels: [2, 3],
        kernel: 3,
        hidden: 4,
    };
    for seed in 0..20 {
        let mut rng = seeded(700 + seed);
        let mut model = BaselineCnn::new(&cfg, &wide_init(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 1, 8, 12], |_| rng.random());
        let err = fd_error(&mut model, &x, &mut rng);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let mut data = FrameDataset::new(desk_frames(3)).unwrap();
    data.fit_normalization(NormKind::Log(20.0)).unwrap();
    let cfg = TrainConfig {
        steps: 0,
        batch: 2,
        ..TrainConfig::default()
    };
    let mut cic = CicModel::new(&CicConfig::desk(), &InitConfig::default(), &mut seeded(1)).unwrap();
    let before = params_snapshot(&cic);
    let history = train(&mut cic, &data, &cfg, &mut seeded(2), &mut NullTelemetry).unwrap();
    assert!(history.is_empty());
    assert_eq!(params_snapshot(&cic), before);

    let mut base = BaselineCnn::new(&BaselineConfig::desk(40, 120), &InitConfig::default(), &mut seeded(1)).unwrap();
    let before = params_snapshot(&base);
    train(&mut base, &data, &cfg, &mut seeded(2), &mut NullTelemetry).unwrap();
    assert_eq!(params_snapshot(&base), before);
}

#[test]
fn single_sample_is_memorized() {
    let frames = desk_frames(10);
    let target = frames[6].clone();
    let mut data = FrameDataset::new(vec![target.clone()]).unwrap();
    let norm = data.fit_normalization(NormKind::Log(20.0)).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        batch: 1,
        ..TrainConfig::default()
    };
    let mut model = CicModel::new(&CicConfig::desk(), &InitConfig::default(), &mut seeded(11)).unwrap();
    let history = train(&mut model, &data, &cfg, &mut seeded(12), &mut NullTelemetry).unwrap();
    let final_mse = history.last().unwrap().mse;
    assert!(final_mse < 1e-3, "final mse {final_mse}");
    let predicted = predict(&model, &[target.image.clone()], &norm).unwrap()[0];
    let rel = (predicted - target.label_raw).abs() / target.label_raw;
    assert!(rel < 0.05, "prediction {predicted} vs label {}", target.label_raw);
}

#[test]
fn single_sample_without_penalty_has_nonincreasing_moving_average() {
    let frames = desk_frames(4);
    let mut data = FrameDataset::new(vec![frames[2].clone()]).unwrap();
    data.fit_normalization(NormKind::Log(20.0)).unwrap();
    let cfg = TrainConfig {
        steps: 600,
        batch: 1,
        l2: 0.0,
        alpha0: 1e-3,
        histogram_every: 0,
        ..TrainConfig::default()
    };
    let mut model = CicModel::new(&mini_desk(), &InitConfig::default(), &mut seeded(21)).unwrap();
    let history = train(&mut model, &data, &cfg, &mut seeded(22), &mut NullTelemetry).unwrap();
    let losses: Vec<f64> = history.iter().map(|r| r.loss).collect();
    let avg: Vec<f64> = losses.windows(100).map(|w| w.iter().sum::<f64>() / 100.0).collect();
    for (i, w) in avg.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-12, "moving average rose at {i}: {} -> {}", w[0], w[1]);
    }
}

/// Desk geometry with narrow tile networks, for the quicker training checks.
fn mini_desk() -> CicConfig {
    CicConfig {
        channels: [2, 2],
        ..CicConfig::desk()
    }
}

#[test]
fn zeroing_a_tile_changes_only_its_grid_cell() {
    let mut rng = seeded(31);
    let cfg = mini_config();
    let model = CicModel::new(&cfg, &wide_init(), &mut rng).unwrap();
    let x = Tensor::from_fn(&[1, 1, 16, 16], |_| rng.random_range(0.1..1.0));
    let base = model.grid_values(&x).unwrap();
    for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let mut z = x.clone();
        for i in 0..8 {
            for j in 0..8 {
                z.data_mut()[(r * 8 + i) * 16 + c * 8 + j] = 0.0;
            }
        }
        let g = model.grid_values(&z).unwrap();
        for cell in 0..4 {
            if cell == r * 2 + c {
                continue;
            }
            assert_eq!(g.data()[cell], base.data()[cell], "cell {cell} moved when tile ({r},{c}) was zeroed");
        }
    }
}

#[test]
fn swapping_tiles_with_their_networks_swaps_grid_cells() {
    let mut rng = seeded(41);
    let mut model = CicModel::new(&mini_config(), &wide_init(), &mut rng).unwrap();
    let x = Tensor::from_fn(&[1, 1, 16, 16], |_| rng.random());
    let base = model.grid_values(&x).unwrap();
    // Swap tile (0,0) with tile (1,1) in the input and in the networks.
    let mut swapped = x.clone();
    for i in 0..8 {
        for j in 0..8 {
            let a = i * 16 + j;
            let b = (8 + i) * 16 + 8 + j;
            swapped.data_mut().swap(a, b);
        }
    }
    let values = |net: &fieldrecon_core::nn::Network| -> Vec<Tensor> { net.store().iter().map(|p| p.value.clone()).collect() };
    let (first, last) = (values(model.subnet(0)), values(model.subnet(3)));
    for (t, vals) in [(0, last), (3, first)] {
        for (p, v) in model.subnet_mut(t).store_mut().iter_mut().zip(vals) {
            p.value = v;
        }
    }
    let g = model.grid_values(&swapped).unwrap();
    assert_eq!(g.data()[0], base.data()[3]);
    assert_eq!(g.data()[3], base.data()[0]);
    assert_eq!(g.data()[1], base.data()[1]);
    assert_eq!(g.data()[2], base.data()[2]);
}

#[test]
fn constant_tile_outputs_pass_through_fusion_affinely() {
    let cfg = mini_config();
    let mut model = CicModel::new(&cfg, &InitConfig::default(), &mut seeded(51)).unwrap();
    let offset = 0.25;
    // Fusion: centre-tap identity conv, pool of a constant, dense with unit gain.
    {
        let fusion = model.fusion_mut();
        for p in fusion.store_mut().iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let layers = fusion.layer_params();
        let conv = layers[0].1.clone();
        let w = &mut fusion.store_mut().get_mut(conv.start).value;
        let ch = w.shape()[0];
        for o in 0..ch {
            w.data_mut()[o * 9 + 4] = 1.0;
        }
        let dense = layers.iter().rev().find(|(_, r)| !r.is_empty()).unwrap().1.clone();
        let dw = &mut fusion.store_mut().get_mut(dense.start).value;
        let n = dw.len() as f64;
        dw.data_mut().fill(1.0 / n);
        fusion.store_mut().get_mut(dense.start + 1).value.data_mut()[0] = offset;
    }
    for k in [0.3, 0.75, 2.0] {
        for t in 0..cfg.tiles() {
            let net = model.subnet_mut(t);
            for p in net.store_mut().iter_mut() {
                p.value.data_mut().fill(0.0);
            }
            let last = net.store().len() - 1;
            net.store_mut().get_mut(last).value.data_mut()[0] = k;
        }
        let x = Tensor::from_fn(&[1, 1, 16, 16], |i| (i % 7) as f64 / 7.0);
        let y = model.infer(&x).unwrap().data()[0];
        assert!((y - (k + offset)).abs() < 1e-12, "k={k}: {y}");
    }
}

#[test]
fn predict_is_denormalized_forward_and_deterministic() {
    let frames = desk_frames(5);
    let mut data = FrameDataset::new(frames.clone()).unwrap();
    let norm = data.fit_normalization(NormKind::ZScore).unwrap();
    let model = CicModel::new(&mini_desk(), &InitConfig::default(), &mut seeded(61)).unwrap();
    let images: Vec<GrayImage> = frames.iter().map(|f| f.image.clone()).collect();
    let raw = cic::forward_frames(&model, &images).unwrap();
    let p1 = predict(&model, &images, &norm).unwrap();
    let p2 = predict(&model, &images, &norm).unwrap();
    assert_eq!(p1, p2);
    for (r, p) in raw.iter().zip(&p1) {
        assert_eq!(denormalize(*r, &norm), *p);
    }
    let twice = predict(&model, &[images[0].clone(), images[0].clone()], &norm).unwrap();
    assert_eq!(twice[0], twice[1]);
}

#[test]
fn histograms_conserve_counts_and_ignore_zero_gradients() {
    let mut model = CicModel::new(&mini_config(), &InitConfig::default(), &mut seeded(71)).unwrap();
    let first = weight_histograms(&model, 0).unwrap();
    for rec in &first {
        let (net_name, layer) = rec.layer.split_once('/').unwrap();
        let (_, net) = model.networks().into_iter().find(|(n, _)| n == net_name).unwrap();
        let (_, range) = net.layer_params().into_iter().find(|(l, _)| l == layer).unwrap();
        let expected: usize = range
            .map(|i| net.store().get(i))
            .filter(|p| p.kind == rec.param_kind)
            .map(|p| p.value.len())
            .sum();
        assert_eq!(rec.histogram.total(), expected, "{}", rec.layer);
    }
    // Biases start constant: one occupied bin.
    for rec in first.iter().filter(|r| r.param_kind == ParamKind::Bias) {
        assert_eq!(rec.histogram.counts.iter().filter(|&&c| c > 0).count(), 1);
    }
    let opt = OptimizerConfig::adam(0.01);
    for step in 1..=2 {
        for k in 0..model.networks().len() {
            let net = model.network_mut(k);
            let zero = Gradients::zeros_like(net.store());
            opt.step(net.store_mut(), &zero, step).unwrap();
        }
    }
    let after = weight_histograms(&model, 0).unwrap();
    assert_eq!(after, first);
}

#[test]
fn training_records_telemetry_and_reduces_loss() {
    let frames = desk_frames(20);
    let mut data = FrameDataset::new(frames).unwrap();
    data.fit_normalization(NormKind::MinMax).unwrap();
    let cfg = TrainConfig {
        steps: 150,
        batch: 8,
        histogram_every: 50,
        ..TrainConfig::default()
    };
    let mut model = CicModel::new(&mini_desk(), &InitConfig::default(), &mut seeded(81)).unwrap();
    let mut sink = MemoryTelemetry::default();
    let history = train(&mut model, &data, &cfg, &mut seeded(82), &mut sink).unwrap();
    assert_eq!(history.len(), 150);
    assert_eq!(sink.losses.len(), 150);
    let steps: std::collections::BTreeSet<usize> = sink.histograms.iter().map(|h| h.step).collect();
    assert_eq!(steps.into_iter().collect::<Vec<_>>(), vec![0, 50, 100, 150]);
    let head: f64 = history[..30].iter().map(|r| r.mse).sum::<f64>() / 30.0;
    let tail: f64 = history[120..].iter().map(|r| r.mse).sum::<f64>() / 30.0;
    assert!(tail < head, "smoothed mse {head} -> {tail}");
    assert!((history[50].lr - 0.01 * 0.99).abs() < 1e-15);
}

#[test]
fn baseline_trains_to_finite_decreasing_loss() {
    let frames = desk_frames(20);
    let mut data = FrameDataset::new(frames).unwrap();
    data.fit_normalization(NormKind::MinMax).unwrap();
    let cfg = TrainConfig {
        steps: 150,
        batch: 8,
        alpha0: 1e-3,
        ..TrainConfig::default()
    };
    let bcfg = BaselineConfig {
        channels: [2, 2],
        ..BaselineConfig::desk(40, 120)
    };
    let mut model = BaselineCnn::new(&bcfg, &InitConfig::default(), &mut seeded(91)).unwrap();
    let history = train(&mut model, &data, &cfg, &mut seeded(92), &mut NullTelemetry).unwrap();
    assert!(history.iter().all(|r| r.loss.is_finite()));
    let head: f64 = history[..30].iter().map(|r| r.mse).sum::<f64>() / 30.0;
    let tail: f64 = history[120..].iter().map(|r| r.mse).sum::<f64>() / 30.0;
    assert!(tail < head, "smoothed mse {head} -> {tail}");
}

#[test]
fn training_rejects_bad_inputs() {
    let frames = desk_frames(3);
    let raw = FrameDataset::new(frames.clone()).unwrap();
    let mut model = CicModel::new(&mini_desk(), &InitConfig::default(), &mut seeded(1)).unwrap();
    let cfg = TrainConfig {
        steps: 1,
        batch: 2,
        ..TrainConfig::default()
    };
    assert!(train(&mut model, &raw, &cfg, &mut seeded(2), &mut NullTelemetry).is_err());

    let mut data = raw.clone();
    data.fit_normalization(NormKind::MinMax).unwrap();
    let big = TrainConfig { batch: 10, ..cfg.clone() };
    assert!(matches!(
        train(&mut model, &data, &big, &mut seeded(2), &mut NullTelemetry),
        Err(Error::Config(_))
    ));

    let mut mini = CicModel::new(&mini_config(), &InitConfig::default(), &mut seeded(1)).unwrap();
    assert!(matches!(
        train(&mut mini, &data, &cfg, &mut seeded(2), &mut NullTelemetry),
        Err(Error::Config(_))
    ));
}

#[test]
fn diverged_weights_abort_with_step() {
    let mut data = FrameDataset::new(desk_frames(3)).unwrap();
    data.fit_normalization(NormKind::MinMax).unwrap();
    let mut model = CicModel::new(&mini_desk(), &InitConfig::default(), &mut seeded(1)).unwrap();
    model.fusion_mut().store_mut().get_mut(0).value.data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        steps: 5,
        batch: 2,
        histogram_every: 0,
        ..TrainConfig::default()
    };
    match train(&mut model, &data, &cfg, &mut seeded(2), &mut NullTelemetry) {
        Err(Error::Numerical(msg)) => assert!(msg.contains("step 0"), "{msg}"),
        other => panic!("expected numerical error, got {:?}", other.map(|h| h.len())),
    }
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(101);
    let cic_model = CicModel::new(&mini_config(), &wide_init(), &mut rng).unwrap();
    let x = Tensor::from_fn(&[3, 1, 16, 16], |_| rng.random());
    cic_model.save(&dir.path().join("cic")).unwrap();
    let loaded = load_regressor(&dir.path().join("cic")).unwrap();
    assert_eq!(loaded.kind(), cic_model.kind());
    assert_eq!(loaded.infer(&x).unwrap(), cic_model.infer(&x).unwrap());

    let bcfg = BaselineConfig {
        frame_height: 16,
        frame_width: 16,
        channels: [2, 2],
        kernel: 3,
        hidden: 4,
    };
    let base = BaselineCnn::new(&bcfg, &wide_init(), &mut rng).unwrap();
    base.save(&dir.path().join("base")).unwrap();
    let loaded = load_regressor(&dir.path().join("base")).unwrap();
    assert_eq!(loaded.kind(), base.kind());
    assert_eq!(loaded.infer(&x).unwrap(), base.infer(&x).unwrap());

    assert!(load_regressor(&dir.path().join("missing")).is_err());
}

