//! One function per subcommand. Each reads its resolved configuration,
//! checks prerequisites, runs the pipeline stage and fills a run record.

use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use fieldrecon_core::cic::{self, BaselineCnn, BaselineConfig, CicConfig, CicModel, CsvTelemetry, FrameRegressor, TrainConfig};
use fieldrecon_core::dataset::{self, histogram, load_dataset, read_manifest, write_manifest, ManifestRow, NormKind, NormSpec, NORM_SPEC_FILE};
use fieldrecon_core::metrics::{self, ClassifierTrainConfig};
use fieldrecon_core::nn::checkpoint::BUNDLE_INDEX;
use fieldrecon_core::nn::InitConfig;
use fieldrecon_core::optim::OptimizerConfig;
use fieldrecon_core::pgm::read_pgm;
use fieldrecon_core::reconstruct::{self, Interpolation, LabeledPseudo, TimelineConfig};
use fieldrecon_core::rng;
use fieldrecon_core::topopt::{self, LoadCase, RenderConfig, TopOptConfig};
use fieldrecon_core::wgan_cae::{self, CaeConfig, CaeModel, CaeTrainConfig, WganConfig, WganModel, WganTrainConfig};
use fieldrecon_core::{Error as CoreError, FrameDataset, GrayImage, Tensor};

use crate::config::RunConfig;
use crate::error::{require, CliError, CliResult};
use crate::manifest::RunRecord;

/// Sub-seed offsets, one per randomized stage.
pub mod offsets {
    pub const SPLIT: u64 = 1;
    pub const CIC_INIT: u64 = 10;
    pub const CIC_BATCHES: u64 = 11;
    pub const CAE: u64 = 20;
    pub const WGAN: u64 = 30;
    pub const GENERATE: u64 = 40;
    pub const CLASSIFIER: u64 = 50;
}

pub const LATENTS_FILE: &str = "latents.bin";

pub fn run(cfg: &RunConfig, record: &mut RunRecord) -> CliResult<()> {
    let out = cfg.out();
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    match cfg.command.as_str() {
        "generate-data" => generate_data(cfg, &out, record),
        "train-cic" => train_cic(cfg, &out, record),
        "train-cae" => train_cae(cfg, &out, record),
        "train-wgan" => train_wgan(cfg, &out, record),
        "generate" => generate(cfg, &out, record),
        "reconstruct" => reconstruct(cfg, &out, record),
        "evaluate" => evaluate(cfg, &out, record),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(CoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// `path` expressed relative to the directory `base`, so that outputs do
/// not depend on where a run was placed.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (Ok(p), Ok(b)) = (path.canonicalize(), base.canonicalize()) else {
        return path.to_path_buf();
    };
    let pc: Vec<Component> = p.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..bc.len() {
        rel.push("..");
    }
    for c in &pc[common..] {
        rel.push(c);
    }
    rel
}

fn csv_path(path: &Path) -> CliResult<String> {
    let s = path.to_string_lossy().into_owned();
    if s.contains([',', '"', '\n']) {
        return Err(CliError::Config(format!("path {s:?} cannot be written to CSV")));
    }
    Ok(s)
}

fn checkpoint_dir(path: PathBuf, what: &'static str) -> CliResult<PathBuf> {
    require(path.join(BUNDLE_INDEX), what)?;
    Ok(path)
}

fn check_geometry(model: (usize, usize), frames: (usize, usize), what: &str) -> CliResult<()> {
    if model != frames {
        return Err(CliError::Incompatible(format!(
            "{what} are {}x{} but the model expects {}x{}",
            frames.0, frames.1, model.0, model.1
        )));
    }
    Ok(())
}

fn all_indices(ds: &FrameDataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

fn topopt_config(cfg: &RunConfig, volfrac: f64) -> CliResult<TopOptConfig> {
    Ok(TopOptConfig {
        nelx: cfg.get("nelx")?,
        nely: cfg.get("nely")?,
        volfrac,
        penal: cfg.get("penal")?,
        rmin: cfg.get("rmin")?,
        max_iters: cfg.get("max-iters")?,
        move_limit: cfg.get("move")?,
        change_tol: cfg.get("change-tol")?,
        load_case: cfg.raw("load-case").parse::<LoadCase>()?,
        ..TopOptConfig::default()
    })
}

fn generate_data(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let render = RenderConfig {
        upsample: cfg.get("upsample")?,
        trim: cfg.get("trim")?,
        crop: cfg.get("crop")?,
    };
    let sweep: Vec<f64> = cfg.list("volfracs")?;
    if sweep.is_empty() {
        let tc = topopt_config(cfg, cfg.get("volfrac")?)?;
        tc.validate()?;
        let (outcome, manifest) = record.timed("campaign", || Ok(topopt::run_campaign(&tc, &render, out)?))?;
        println!(
            "volfrac {}: {} frames, compliance {:.4} -> {:.4}{}",
            tc.volfrac,
            outcome.frames.len(),
            outcome.initial_compliance(),
            outcome.final_compliance(),
            if outcome.converged { " (converged)" } else { "" }
        );
        record.artifact("frames", manifest);
        return Ok(());
    }
    let configs = sweep.iter().map(|&vf| topopt_config(cfg, vf)).collect::<CliResult<Vec<_>>>()?;
    for tc in &configs {
        tc.validate()?;
    }
    let mut rows = Vec::new();
    for tc in &configs {
        let sub = format!("vf_{:?}", tc.volfrac);
        let (outcome, manifest) = record.timed(&format!("campaign {sub}"), || {
            Ok(topopt::run_campaign(tc, &render, &out.join(&sub))?)
        })?;
        println!(
            "volfrac {}: {} frames, compliance {:.4} -> {:.4}{}",
            tc.volfrac,
            outcome.frames.len(),
            outcome.initial_compliance(),
            outcome.final_compliance(),
            if outcome.converged { " (converged)" } else { "" }
        );
        for r in read_manifest(&manifest)? {
            rows.push(ManifestRow {
                image_path: format!("{sub}/{}", r.image_path),
                ..r
            });
        }
        record.artifact(&format!("campaign {sub}"), manifest);
    }
    let combined = out.join(dataset::MANIFEST_FILE);
    write_manifest(&combined, &rows)?;
    println!("{} frames in total", rows.len());
    record.artifact("frames", combined);
    Ok(())
}

fn load_frames(cfg: &RunConfig, key: &str) -> CliResult<FrameDataset> {
    let path = require(cfg.path(key)?, "frame manifest")?;
    Ok(load_dataset(&path)?)
}

/// `(train, eval)` with the split shared by train-cic and evaluate.
fn split_frames(cfg: &RunConfig, ds: &FrameDataset) -> CliResult<(FrameDataset, FrameDataset)> {
    let frac: f64 = cfg.get("eval-fraction")?;
    Ok(dataset::split(ds, frac, cfg.seed().wrapping_add(offsets::SPLIT))?)
}

fn train_cic(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let all = load_frames(cfg, "data")?;
    let (mut train, held) = split_frames(cfg, &all)?;
    let kind = NormKind::parse(cfg.raw("norm"), cfg.get("log-base")?)?;
    let norm = train.fit_normalization(kind)?;
    let (h, w) = train
        .frame_shape()
        .ok_or_else(|| CliError::Config("no training frames left after the split".into()))?;
    let channels = cfg.array::<usize, 2>("channels")?;
    let kernel = cfg.get("kernel")?;
    let mut init_rng = rng::stage(cfg.seed(), offsets::CIC_INIT);
    let mut model: Box<dyn FrameRegressor> = match cfg.raw("model") {
        "cic" => {
            let cc = CicConfig {
                channels,
                kernel,
                fusion_channels: cfg.get("fusion-channels")?,
                ..CicConfig::for_frame(h, w, cfg.get("grid-rows")?, cfg.get("grid-cols")?)?
            };
            Box::new(CicModel::new(&cc, &InitConfig::default(), &mut init_rng)?)
        }
        "baseline" => {
            let bc = BaselineConfig {
                frame_height: h,
                frame_width: w,
                channels,
                kernel,
                hidden: cfg.get("hidden")?,
            };
            Box::new(BaselineCnn::new(&bc, &InitConfig::default(), &mut init_rng)?)
        }
        other => return Err(CliError::Config(format!("unknown model {other:?} (cic or baseline)"))),
    };
    let alpha0 = cfg.get("alpha0")?;
    let tc = TrainConfig {
        steps: cfg.get("steps")?,
        batch: cfg.get("batch")?,
        alpha0,
        decay: cfg.get("decay")?,
        decay_period: cfg.get("decay-period")?,
        l2: cfg.get("l2")?,
        histogram_every: cfg.get("histogram-every")?,
        optimizer: OptimizerConfig::adam(alpha0),
    };
    let loss_path = out.join("loss.csv");
    let hist_path = out.join("histograms.csv");
    let history = record.timed("train", || {
        let mut sink = CsvTelemetry::create(&loss_path, &hist_path)?;
        let mut batch_rng = rng::stage(cfg.seed(), offsets::CIC_BATCHES);
        let history = cic::train(model.as_mut(), &train, &tc, &mut batch_rng, &mut sink)?;
        sink.finish()?;
        Ok(history)
    })?;
    let ckpt = out.join("cic");
    model.save(&ckpt)?;
    write_text(&ckpt.join(NORM_SPEC_FILE), &norm.to_text())?;

    let images: Vec<GrayImage> = train.frames.iter().map(|f| f.image.clone()).collect();
    let predicted = cic::predict(model.as_ref(), &images, &norm)?;
    let acc = metrics::per_sample_accuracy(&train.labels_raw(), &predicted)?;
    let good = acc.iter().filter(|&&a| a >= 0.8).count();
    if let Some(last) = history.last() {
        println!("step {}: loss {:.6}, mse {:.6}", last.step, last.loss, last.mse);
    }
    println!(
        "{good}/{} training frames with (1-error) >= 0.8; {} held out",
        train.len(),
        held.len()
    );
    record.artifact("checkpoint", ckpt);
    record.artifact("loss", loss_path);
    record.artifact("histograms", hist_path);
    Ok(())
}

fn train_cae(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let data = load_frames(cfg, "data")?;
    let (h, w) = data.frame_shape().expect("datasets are non-empty");
    let cc = CaeConfig {
        frame_height: h,
        frame_width: w,
        conv_channels: cfg.array("conv-channels")?,
        dense: cfg.array("dense")?,
        latent_height: cfg.get("latent-height")?,
        latent_width: cfg.get("latent-width")?,
    };
    let tc = CaeTrainConfig {
        epochs: cfg.get("epochs")?,
        batch: cfg.get("batch")?,
        optimizer: OptimizerConfig::adam(cfg.get("lr")?),
    };
    let mut rng = rng::stage(cfg.seed(), offsets::CAE);
    let mut cae = CaeModel::new(&cc, &InitConfig::default(), &mut rng)?;
    let history = record.timed("train", || Ok(wgan_cae::train_cae(&mut cae, &data, &tc, &mut rng)?))?;
    let loss_path = out.join("cae_loss.csv");
    let mut csv = String::from("epoch,mse\n");
    for (e, mse) in history.iter().enumerate() {
        let _ = writeln!(csv, "{e},{mse:?}");
    }
    write_text(&loss_path, &csv)?;

    let ckpt = out.join("cae");
    cae.save(&ckpt)?;
    let mut codes = Vec::with_capacity(data.len());
    for chunk in all_indices(&data).chunks(64) {
        codes.extend(cae.encode(&data.images(chunk)?)?.unstack());
    }
    let latents = Tensor::stack(&codes)?.reshape(&[data.len(), 1, cc.latent_height, cc.latent_width])?;
    let latents_path = ckpt.join(LATENTS_FILE);
    wgan_cae::write_latents(&latents_path, &latents)?;
    if let Some(last) = history.last() {
        println!("epoch {}: mse {last:.6}", history.len() - 1);
    }
    record.artifact("checkpoint", ckpt);
    record.artifact("latents", latents_path);
    record.artifact("loss", loss_path);
    Ok(())
}

fn train_wgan(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let cae_dir = checkpoint_dir(cfg.path("cae")?, "autoencoder checkpoint")?;
    let latents_path = require(cae_dir.join(LATENTS_FILE), "latent dataset")?;
    let cae = CaeModel::load(&cae_dir)?;
    let latents = wgan_cae::read_latents(&latents_path)?;
    let (lh, lw) = cae.latent_shape();
    if latents.shape()[2..] != [lh, lw] {
        return Err(CliError::Incompatible(format!(
            "latent file holds {:?} codes but the autoencoder produces {lh}x{lw}",
            &latents.shape()[2..]
        )));
    }
    let wc = WganConfig {
        z_dim: cfg.get("z-dim")?,
        latent_height: lh,
        latent_width: lw,
        generator_channels: cfg.array("generator-channels")?,
        critic_channels: cfg.array("critic-channels")?,
        clip: cfg.get("clip")?,
        n_critic: cfg.get("n-critic")?,
    };
    let tc = WganTrainConfig {
        steps: cfg.get("steps")?,
        batch: cfg.get("batch")?,
        optimizer: OptimizerConfig::rmsprop(cfg.get("lr")?),
    };
    let mut rng = rng::stage(cfg.seed(), offsets::WGAN);
    let mut wgan = WganModel::new(&wc, &InitConfig::default(), &mut rng)?;
    let history = record.timed("train", || Ok(wgan_cae::train_wgan(&mut wgan, &latents, &tc, &mut rng)?))?;
    let loss_path = out.join("wgan_loss.csv");
    let mut csv = String::from("step,g_loss,critic_loss\n");
    for r in &history {
        let _ = writeln!(csv, "{},{:?},{:?}", r.step, r.g_loss, r.critic_loss);
    }
    write_text(&loss_path, &csv)?;
    let ckpt = out.join("wgan");
    wgan.save(&ckpt)?;
    if let Some(last) = history.last() {
        println!("step {}: g_loss {:.6e}, critic_loss {:.6e}", last.step, last.g_loss, last.critic_loss);
    }
    record.artifact("checkpoint", ckpt);
    record.artifact("loss", loss_path);
    Ok(())
}

fn generate(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let wgan_dir = checkpoint_dir(cfg.path("wgan")?, "WGAN checkpoint")?;
    let cae_dir = checkpoint_dir(cfg.path("cae")?, "autoencoder checkpoint")?;
    let wgan = WganModel::load(&wgan_dir)?;
    let cae = CaeModel::load(&cae_dir)?;
    let wc = wgan.config();
    if (wc.latent_height, wc.latent_width) != cae.latent_shape() {
        return Err(CliError::Incompatible(format!(
            "generator emits {}x{} latents, decoder expects {:?}",
            wc.latent_height,
            wc.latent_width,
            cae.latent_shape()
        )));
    }
    let count: usize = cfg.get("count")?;
    let seed = cfg.seed().wrapping_add(offsets::GENERATE);
    let frames = record.timed("generate", || Ok(wgan_cae::generate(&wgan, &cae, count, seed)?))?;
    let manifest = wgan_cae::save_generated(&frames, out, seed)?;
    println!("{count} pseudo frames written");
    record.artifact("pseudo", manifest);
    Ok(())
}

fn load_regressor(cfg: &RunConfig) -> CliResult<(Box<dyn FrameRegressor>, NormSpec, PathBuf)> {
    let dir = checkpoint_dir(cfg.path("cic")?, "regressor checkpoint")?;
    let norm_path = require(dir.join(NORM_SPEC_FILE), "normalization spec")?;
    let model = cic::load_regressor(&dir)?;
    let text = fs::read_to_string(&norm_path).map_err(|e| io_error(&norm_path, e))?;
    Ok((model, NormSpec::from_text(&text)?, dir))
}

fn load_generated(manifest: &Path) -> CliResult<Vec<(PathBuf, GrayImage)>> {
    wgan_cae::read_generated(manifest)?
        .into_iter()
        .map(|g| {
            let path = require(g.image_path, "pseudo frame")?;
            let image = read_pgm(&path)?;
            Ok((path, image))
        })
        .collect()
}

fn reconstruct(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let real_path = require(cfg.path("real")?, "real frame manifest")?;
    let pseudo_path = require(cfg.path("pseudo")?, "pseudo frame manifest")?;
    let (model, norm, _) = load_regressor(cfg)?;
    let real_base = real_path.parent().unwrap_or(Path::new("."));
    let mut real = read_manifest(&real_path)?;
    let first = require(real_base.join(&real.first().ok_or_else(|| {
        CliError::Core(CoreError::Data(format!("{} lists no frames", real_path.display())))
    })?.image_path), "real frame")?;
    let img = read_pgm(&first)?;
    check_geometry(model.frame_shape(), (img.height(), img.width()), "real frames")?;
    let pseudo = load_generated(&pseudo_path)?;
    if let Some((_, p)) = pseudo.first() {
        check_geometry(model.frame_shape(), (p.height(), p.width()), "pseudo frames")?;
    }
    let images: Vec<GrayImage> = pseudo.iter().map(|(_, img)| img.clone()).collect();
    let labels = record.timed("label", || Ok(reconstruct::label_pseudo_frames(model.as_ref(), &norm, &images)?))?;

    let mut pseudo_csv = String::from("gen_index,image_path,predicted_compliance\n");
    let mut labeled = Vec::with_capacity(labels.len());
    for (i, ((path, _), c)) in pseudo.iter().zip(&labels).enumerate() {
        let rel = relative_to(path, out);
        let _ = writeln!(pseudo_csv, "{i},{},{c:?}", csv_path(&rel)?);
        labeled.push(LabeledPseudo {
            frame_ref: rel,
            compliance: *c,
        });
    }
    for r in &mut real {
        r.image_path = relative_to(&real_base.join(&r.image_path), out).to_string_lossy().into_owned();
    }
    let tc = TimelineConfig {
        densify_factor: cfg.get("densify-factor")?,
        tolerance: cfg.get("tolerance")?,
        interpolation: cfg.raw("interpolation").parse::<Interpolation>()?,
    };
    let timeline = reconstruct::build_timeline(&real, &labeled, &tc)?;
    let files = reconstruct::export_timeline(&timeline, out)?;
    let labels_path = out.join("pseudo_labels.csv");
    write_text(&labels_path, &pseudo_csv)?;
    println!(
        "timeline: {} real + {} pseudo points, {} empty slots",
        timeline.count(reconstruct::Origin::Real),
        timeline.count(reconstruct::Origin::Pseudo),
        timeline.empty_slots.len()
    );
    record.artifact("timeline", files.csv);
    record.artifact("curve", files.svg);
    record.artifact("empty_slots", files.empty_slots);
    record.artifact("pseudo_labels", labels_path);
    Ok(())
}

fn evaluate(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let all = load_frames(cfg, "data")?;
    let (model, norm, _) = load_regressor(cfg)?;
    let frac: f64 = cfg.get("eval-fraction")?;
    let eval = if frac > 0.0 { split_frames(cfg, &all)?.1 } else { all.clone() };
    if eval.is_empty() {
        return Err(CliError::Config("the evaluation split is empty".into()));
    }
    let shape = eval.frame_shape().expect("non-empty");
    check_geometry(model.frame_shape(), shape, "evaluation frames")?;
    let images: Vec<GrayImage> = eval.frames.iter().map(|f| f.image.clone()).collect();
    let truth = eval.labels_raw();
    let predicted = record.timed("predict", || Ok(cic::predict(model.as_ref(), &images, &norm)?))?;

    let report = metrics::regression_metrics(&truth, &predicted)?;
    let reg_path = out.join("regression.csv");
    write_text(&reg_path, &format!("{}\n{}\n", metrics::RegressionReport::CSV_HEADER, report.csv_row()))?;
    write_text(&out.join("regression.txt"), &report.text())?;
    let per_sample = out.join("per_sample.csv");
    metrics::write_per_sample_csv(&per_sample, &truth, &predicted)?;
    let acc = metrics::per_sample_accuracy(&truth, &predicted)?;
    let mut acc_csv = String::from("index,truth,predicted,one_minus_error\n");
    for (i, ((t, p), a)) in truth.iter().zip(&predicted).zip(&acc).enumerate() {
        let _ = writeln!(acc_csv, "{i},{t:?},{p:?},{a:?}");
    }
    let acc_path = out.join("accuracy.csv");
    write_text(&acc_path, &acc_csv)?;
    let hist = histogram(&all.labels_raw(), cfg.get("histogram-bins")?)?;
    let mut hist_csv = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in hist.counts.iter().enumerate() {
        let _ = writeln!(hist_csv, "{:?},{:?},{c}", hist.edges[i], hist.edges[i + 1]);
    }
    let hist_path = out.join("label_histogram.csv");
    write_text(&hist_path, &hist_csv)?;

    let mut summary = vec![
        ("samples".to_string(), truth.len() as f64),
        ("mae".into(), report.mae),
        ("aae".into(), report.aae),
        ("rmse".into(), report.rmse),
        ("relative_error_percent".into(), report.relative_error),
        (
            "share_one_minus_error_ge_0.8".into(),
            acc.iter().filter(|&&a| a >= 0.8).count() as f64 / acc.len() as f64,
        ),
    ];

    if let Some(dir) = cfg.optional_path("cae") {
        let cae = CaeModel::load(&checkpoint_dir(dir, "autoencoder checkpoint")?)?;
        let cc = cae.config();
        check_geometry((cc.frame_height, cc.frame_width), shape, "evaluation frames")?;
        let mut recon = Vec::with_capacity(eval.len());
        let mut orig = Vec::with_capacity(eval.len());
        for chunk in all_indices(&eval).chunks(64) {
            let x = eval.images(chunk)?;
            recon.extend(cae.decode(&cae.encode(&x)?)?.unstack());
            orig.extend(x.unstack());
        }
        summary.push(("pixel_mse".into(), metrics::pixel_mse(&recon, &orig)?));
    }

    if let Some(manifest) = cfg.optional_path("pseudo") {
        let pseudo = load_generated(&require(manifest, "pseudo frame manifest")?)?;
        if let Some((_, p)) = pseudo.first() {
            check_geometry(shape, (p.height(), p.width()), "pseudo frames")?;
        }
        let tc = ClassifierTrainConfig {
            max_steps: cfg.get("classifier-steps")?,
            ..ClassifierTrainConfig::default()
        };
        let mut crng = rng::stage(cfg.seed(), offsets::CLASSIFIER);
        let classifier = record.timed("classifier", || {
            Ok(metrics::train_label_classifier(&all, cfg.get("classes")?, &tc, &mut crng)?)
        })?;
        if let Some(w) = &classifier.warning {
            eprintln!("warning: {w}");
            record.warnings.push(w.clone());
        }
        summary.push(("classifier_accuracy".into(), classifier.training_accuracy));
        let real_images: Vec<GrayImage> = all.frames.iter().map(|f| f.image.clone()).collect();
        summary.push(("inception_score_real".into(), metrics::inception_score(&classifier, &real_images)?));
        if !pseudo.is_empty() {
            let images: Vec<GrayImage> = pseudo.into_iter().map(|(_, img)| img).collect();
            summary.push(("inception_score_pseudo".into(), metrics::inception_score(&classifier, &images)?));
        }
    }

    let mut csv = String::from("metric,value\n");
    for (k, v) in &summary {
        let _ = writeln!(csv, "{k},{v:?}");
        println!("{k:<30} {v:.6}");
    }
    let summary_path = out.join("summary.csv");
    write_text(&summary_path, &csv)?;
    record.artifact("summary", summary_path);
    record.artifact("regression", reg_path);
    record.artifact("per_sample", per_sample);
    record.artifact("accuracy", acc_path);
    record.artifact("label_histogram", hist_path);
    Ok(())
}
