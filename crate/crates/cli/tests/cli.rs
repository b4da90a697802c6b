use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fieldrecon_core::cic::{CicConfig, CicModel, FrameRegressor};
use fieldrecon_core::nn::InitConfig;
use fieldrecon_core::rng;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fieldrecon"));
    c.env_remove("FIELDRECON_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small 20x60 corpus: two volume fractions, 8 iterations each.
fn small_corpus(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "generate-data", "--nelx", "30", "--nely", "10", "--volfracs", "0.4,0.5",
        "--max-iters", "8", "--out", s(&out),
    ]);
    out.join("manifest.csv")
}

fn data_rows(manifest: &Path) -> Vec<String> {
    fs::read_to_string(manifest).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn default_campaign_writes_matching_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["generate-data", "--out", s(&out)]);
    let rows = data_rows(&out.join("manifest.csv"));
    assert!(!rows.is_empty() && rows.len() <= 100);
    for row in &rows {
        let image = row.split(',').nth(1).unwrap();
        assert!(out.join(image).is_file(), "{image} listed but missing");
    }
    let pgms = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    assert_eq!(pgms, rows.len());
    assert!(out.join("run.manifest").is_file());
}

#[test]
fn one_iteration_gives_one_frame() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate-data", "--max-iters", "1", "--out", s(dir.path())]);
    assert_eq!(data_rows(&dir.path().join("manifest.csv")).len(), 1);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate-data", "--bogus", "1"]);
    assert_eq!(code(&out), 2);

    let out = run(&["generate-data", "--volfrac", "1.5", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("volfrac"), "{}", stderr(&out));

    let out = run(&["generate-data", "--nelx", "abc", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nelx"), "{}", stderr(&out));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "# comment\nnelx = 20\nnot_a_key = 3\n").unwrap();
    let out = run(&["generate-data", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not-a-key"), "{}", stderr(&out));

    let out = bin()
        .args(["generate-data", "--max-iters", "1", "--out", s(dir.path())])
        .env("FIELDRECON_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_prerequisites_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let out_dir = dir.path().join("o");

    let out = run(&["train-wgan", "--cae", s(&nowhere), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("autoencoder"), "{}", stderr(&out));

    let out = run(&["train-cic", "--data", s(&nowhere.join("manifest.csv")), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("manifest"), "{}", stderr(&out));

    let real = small_corpus(dir.path());
    let out = run(&[
        "reconstruct", "--real", s(&real), "--pseudo", s(&real), "--cic", s(&nowhere), "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("regressor"), "{}", stderr(&out));

    let out = run(&["generate", "--wgan", s(&nowhere), "--cae", s(&nowhere), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn zero_steps_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path());
    let out = dir.path().join("cic");
    ok(&["train-cic", "--data", s(&data), "--steps", "0", "--batch", "4", "--seed", "5", "--out", s(&out)]);

    let cc = CicConfig {
        channels: [4, 4],
        kernel: 5,
        fusion_channels: 8,
        ..CicConfig::for_frame(20, 60, 2, 5).unwrap()
    };
    let model = CicModel::new(&cc, &InitConfig::default(), &mut rng::stage(5, 10)).unwrap();
    let expect = dir.path().join("expect");
    model.save(&expect).unwrap();
    for entry in fs::read_dir(&expect).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(expect.join(&name)).unwrap(),
            fs::read(out.join("cic").join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path());
    let train = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train-cic", "--data", s(&data), "--grid-rows", "1", "--grid-cols", "2", "--steps", "20",
            "--batch", "4", "--histogram-every", "10", "--seed", seed, "--out", s(&out),
        ]);
        (fs::read(out.join("loss.csv")).unwrap(), fs::read(out.join("histograms.csv")).unwrap())
    };
    let a = train("a", "3");
    assert_eq!(a, train("b", "3"));
    assert_ne!(a.0, train("c", "4").0);
}

#[test]
fn seed_precedence_is_defaults_file_env_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 11\nmax_iters = 1\n").unwrap();
    let seed_of = |env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join("o");
        let mut c = bin();
        c.args(["generate-data", "--config", s(&cfg), "--out", s(&out)]);
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        if let Some(e) = env {
            c.env("FIELDRECON_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
        let text = fs::read_to_string(out.join("run.manifest")).unwrap();
        assert!(text.contains("config max-iters = 1"));
        text.lines().find_map(|l| l.strip_prefix("config seed = ")).unwrap().to_string()
    };
    assert_eq!(seed_of(None, None), "11");
    assert_eq!(seed_of(Some("12"), None), "12");
    assert_eq!(seed_of(Some("12"), Some("13")), "13");
}

/// Trains a throwaway CAE and WGAN on the small corpus.
fn generative_models(dir: &Path, data: &Path) -> (PathBuf, PathBuf) {
    let cae = dir.join("cae");
    ok(&["train-cae", "--data", s(data), "--epochs", "2", "--out", s(&cae)]);
    let wgan = dir.join("wgan");
    ok(&["train-wgan", "--cae", s(&cae.join("cae")), "--steps", "5", "--batch", "4", "--out", s(&wgan)]);
    (cae.join("cae"), wgan.join("wgan"))
}

#[test]
fn generation_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path());
    let (cae, wgan) = generative_models(dir.path(), &data);

    let none = dir.path().join("none");
    ok(&["generate", "--wgan", s(&wgan), "--cae", s(&cae), "--count", "0", "--out", s(&none)]);
    assert!(data_rows(&none.join("manifest.csv")).is_empty());

    let gen = |name: &str| {
        let out = dir.path().join(name);
        ok(&["generate", "--wgan", s(&wgan), "--cae", s(&cae), "--count", "10", "--seed", "2", "--out", s(&out)]);
        out
    };
    let (a, b) = (gen("a"), gen("b"));
    let mut pgms: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".pgm"))
        .collect();
    pgms.sort();
    assert_eq!(pgms.len(), 10);
    for name in pgms.iter().map(Path::new).chain([Path::new("manifest.csv")]) {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }

    let out = run(&["train-wgan", "--cae", s(dir.path()), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn reconstruct_outputs_and_geometry_check() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path());
    let real = dir.path().join("data/vf_0.4/manifest.csv");
    let (cae, wgan) = generative_models(dir.path(), &data);
    let cic = dir.path().join("cic");
    ok(&["train-cic", "--data", s(&data), "--steps", "5", "--batch", "4", "--out", s(&cic)]);
    let pseudo = dir.path().join("gen");
    ok(&["generate", "--wgan", s(&wgan), "--cae", s(&cae), "--count", "6", "--out", s(&pseudo)]);

    let rec = |factor: &str, out: &Path| {
        ok(&[
            "reconstruct", "--real", s(&real), "--pseudo", s(&pseudo.join("manifest.csv")),
            "--cic", s(&cic.join("cic")), "--densify-factor", factor, "--out", s(out),
        ]);
        fs::read_to_string(out.join("timeline.csv")).unwrap()
    };
    let plain = rec("1", &dir.path().join("r1"));
    assert_eq!(plain.lines().count() - 1, data_rows(&real).len());

    let dense = rec("4", &dir.path().join("r4"));
    let positions: Vec<f64> = dense.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    let out = dir.path().join("r4");
    assert!(out.join("timeline.svg").is_file() && out.join("empty_slots.txt").is_file());
    assert_eq!(data_rows(&out.join("pseudo_labels.csv")).len(), 6);

    let other = dir.path().join("other");
    ok(&["generate-data", "--nelx", "20", "--nely", "10", "--max-iters", "2", "--out", s(&other)]);
    let out = run(&[
        "reconstruct", "--real", s(&other.join("manifest.csv")), "--pseudo", s(&pseudo.join("manifest.csv")),
        "--cic", s(&cic.join("cic")), "--out", s(&dir.path().join("bad")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn evaluate_memorized_sample_and_duplicate_pseudo_frames() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    ok(&["generate-data", "--nelx", "30", "--nely", "10", "--max-iters", "1", "--out", s(&one)]);
    let cic = dir.path().join("cic");
    ok(&[
        "train-cic", "--data", s(&one.join("manifest.csv")), "--steps", "1500", "--batch", "1",
        "--histogram-every", "0", "--out", s(&cic),
    ]);

    // every pseudo row points at the same image
    let corpus = small_corpus(dir.path());
    let frame = dir.path().join("data").join(data_rows(&corpus)[0].split(',').nth(1).unwrap());
    let pseudo = dir.path().join("dup.csv");
    let mut text = String::from("gen_index,image_path,seed\n");
    for i in 0..5 {
        text.push_str(&format!("{i},{},0\n", frame.display()));
    }
    fs::write(&pseudo, text).unwrap();

    let eval = dir.path().join("eval");
    ok(&[
        "evaluate", "--data", s(&one.join("manifest.csv")), "--cic", s(&cic.join("cic")), "--out", s(&eval),
    ]);
    let summary = fs::read_to_string(eval.join("summary.csv")).unwrap();
    let metric = |text: &str, key: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(&format!("{key},"))).unwrap().parse().unwrap()
    };
    assert!(metric(&summary, "relative_error_percent") < 5.0, "{summary}");
    for f in ["regression.csv", "regression.txt", "per_sample.csv", "accuracy.csv", "label_histogram.csv"] {
        assert!(eval.join(f).is_file(), "{f}");
    }

    // the classifier needs a corpus with spread labels
    let cic2 = dir.path().join("cic2");
    ok(&["train-cic", "--data", s(&corpus), "--steps", "2", "--batch", "2", "--out", s(&cic2)]);
    let eval2 = dir.path().join("eval2");
    ok(&[
        "evaluate", "--data", s(&corpus), "--cic", s(&cic2.join("cic")), "--pseudo", s(&pseudo),
        "--classes", "3", "--classifier-steps", "30", "--out", s(&eval2),
    ]);
    let summary = fs::read_to_string(eval2.join("summary.csv")).unwrap();
    assert!((metric(&summary, "inception_score_pseudo") - 1.0).abs() < 1e-12, "{summary}");
    let hist = fs::read_to_string(eval2.join("label_histogram.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, data_rows(&corpus).len());
}

#[test]
fn replay_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["generate-data", "--nelx", "24", "--nely", "8", "--max-iters", "4", "--seed", "7", "--out", s(&first)]);
    let second = dir.path().join("second");
    ok(&["replay", s(&first.join("run.manifest")), "--out", s(&second)]);
    for name in ["manifest.csv", "frame_0001.pgm", "frame_0004.pgm"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
    let replayed = fs::read_to_string(second.join("run.manifest")).unwrap();
    assert!(replayed.contains("config seed = 7"));

    let out = run(&["replay", s(&dir.path().join("absent.manifest"))]);
    assert_eq!(code(&out), 3);
}
