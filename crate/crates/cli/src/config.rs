//! Layered `key = value` configuration: built-in defaults, then an optional
//! config file, then `FIELDRECON_SEED`, then `--key value` flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "FIELDRECON_SEED";

/// One documented configuration key.
#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const COMMON: &[Key] = &[
    key("seed", "0", "global seed; every stage derives its own stream from it"),
    key("out", "out", "output directory (receives run.manifest)"),
];

const GENERATE_DATA: &[Key] = &[
    key("nelx", "60", "elements along x"),
    key("nely", "20", "elements along y"),
    key("volfrac", "0.5", "target volume fraction"),
    key("volfracs", "", "comma-separated volume fractions; runs one campaign per value"),
    key("penal", "3", "SIMP penalization exponent"),
    key("rmin", "1.5", "sensitivity filter radius in elements"),
    key("max-iters", "100", "iteration cap per campaign"),
    key("move", "0.2", "optimality-criteria move limit"),
    key("change-tol", "0.01", "stop when the largest density change falls below this"),
    key("load-case", "mbb", "mbb or cantilever"),
    key("upsample", "2", "pixels per element edge"),
    key("trim", "false", "keep only the lower half of each frame"),
    key("crop", "false", "remove blank border rows and columns"),
];

const TRAIN_CIC: &[Key] = &[
    key("data", "", "frame manifest to train on"),
    key("model", "cic", "cic (tiled) or baseline (single network)"),
    key("norm", "log", "label normalization: log, minmax or zscore"),
    key("log-base", "20", "base of the log normalization"),
    key("eval-fraction", "0", "share of frames held out for evaluation"),
    key("grid-rows", "2", "tile rows"),
    key("grid-cols", "5", "tile columns"),
    key("channels", "4,4", "channels of the first two convolutions"),
    key("kernel", "5", "convolution kernel size"),
    key("fusion-channels", "8", "channels of the fusion convolution"),
    key("hidden", "32", "hidden units of the baseline network"),
    key("steps", "5000", "training steps"),
    key("batch", "50", "frames per step, sampled with replacement"),
    key("alpha0", "0.01", "initial learning rate"),
    key("decay", "0.99", "learning-rate decay factor per period"),
    key("decay-period", "50", "steps per decay period"),
    key("l2", "0.0001", "weight-decay coefficient"),
    key("histogram-every", "50", "steps between weight histograms (0 disables)"),
];

const TRAIN_CAE: &[Key] = &[
    key("data", "", "frame manifest to train on"),
    key("epochs", "100", "passes over the data"),
    key("batch", "8", "frames per step"),
    key("lr", "0.001", "Adam learning rate"),
    key("conv-channels", "8,16,16", "channels of the three stride-2 convolutions"),
    key("dense", "128,128,64", "widths of the three hidden dense layers"),
    key("latent-height", "8", "latent image height"),
    key("latent-width", "8", "latent image width"),
];

const TRAIN_WGAN: &[Key] = &[
    key("cae", "", "trained autoencoder directory (holds latents.bin)"),
    key("z-dim", "64", "noise vector length"),
    key("generator-channels", "32,16", "generator channels before each deconvolution"),
    key("critic-channels", "16,32", "critic convolution channels"),
    key("clip", "0.01", "critic weight clip bound"),
    key("n-critic", "5", "critic updates per generator update"),
    key("steps", "2000", "generator updates"),
    key("batch", "32", "samples per update"),
    key("lr", "0.0005", "RMSProp learning rate"),
];

const GENERATE: &[Key] = &[
    key("wgan", "", "trained WGAN directory"),
    key("cae", "", "trained autoencoder directory"),
    key("count", "100", "frames to generate"),
];

const RECONSTRUCT: &[Key] = &[
    key("real", "", "manifest of one optimization campaign"),
    key("pseudo", "", "manifest written by generate"),
    key("cic", "", "trained regressor directory"),
    key("densify-factor", "4", "timeline points per real interval"),
    key("tolerance", "0.1", "relative compliance tolerance for filling a slot"),
    key("interpolation", "piecewise", "piecewise (local cubic) or global (at most 12 frames)"),
];

const EVALUATE: &[Key] = &[
    key("data", "", "frame manifest with true labels"),
    key("cic", "", "trained regressor directory"),
    key("eval-fraction", "0", "evaluate only the held-out share used by train-cic"),
    key("cae", "", "optional autoencoder directory for pixel MSE"),
    key("pseudo", "", "optional generated manifest for the inception score"),
    key("classes", "5", "compliance bins of the inception-score classifier"),
    key("classifier-steps", "1500", "step cap of the classifier"),
    key("histogram-bins", "50", "bins of the label histogram"),
];

pub const COMMANDS: &[(&str, &str)] = &[
    ("generate-data", "run topology-optimization campaigns and write labelled frames"),
    ("train-cic", "train the frame-to-compliance regressor"),
    ("train-cae", "train the autoencoder and encode the training frames"),
    ("train-wgan", "train the latent-space WGAN"),
    ("generate", "decode generator samples into pseudo frames"),
    ("reconstruct", "label pseudo frames and build the densified timeline"),
    ("evaluate", "write regression, pixel and inception-score reports"),
];

pub fn schema(command: &str) -> Vec<Key> {
    let specific = match command {
        "generate-data" => GENERATE_DATA,
        "train-cic" => TRAIN_CIC,
        "train-cae" => TRAIN_CAE,
        "train-wgan" => TRAIN_WGAN,
        "generate" => GENERATE,
        "reconstruct" => RECONSTRUCT,
        "evaluate" => EVALUATE,
        _ => &[],
    };
    COMMON.iter().chain(specific).copied().collect()
}

/// Fully resolved configuration of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub values: BTreeMap<String, String>,
}

fn canonical(k: &str) -> String {
    k.trim().replace('_', "-")
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
        })?;
        out.push((canonical(k), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Merge the layers. `file` and `flags` keys must belong to the schema.
    pub fn resolve(
        command: &str,
        file: &[(String, String)],
        env_seed: Option<String>,
        flags: &[(String, String)],
    ) -> CliResult<Self> {
        let keys = schema(command);
        let mut values: BTreeMap<String, String> =
            keys.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        for (k, v) in file {
            if !values.contains_key(k) {
                return Err(CliError::Config(format!("unknown key `{k}` for {command} in config file")));
            }
            values.insert(k.clone(), v.clone());
        }
        if let Some(seed) = env_seed {
            values.insert("seed".into(), seed);
        }
        for (k, v) in flags {
            if !values.contains_key(k) {
                return Err(CliError::Config(format!("unknown key `{k}` for {command}")));
            }
            values.insert(k.clone(), v.clone());
        }
        let cfg = RunConfig {
            command: command.to_string(),
            values,
        };
        cfg.get::<u64>("seed")?;
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key `{key}` is not in the {} schema", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self.raw(key);
        raw.trim()
            .parse()
            .map_err(|_| CliError::Config(format!("invalid value {raw:?} for `{key}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let raw = self.raw(key);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("invalid entry {s:?} in `{key}`")))
            })
            .collect()
    }

    pub fn array<T: FromStr + Copy, const N: usize>(&self, key: &str) -> CliResult<[T; N]> {
        let v = self.list::<T>(key)?;
        v.try_into()
            .map_err(|v: Vec<T>| CliError::Config(format!("`{key}` needs {N} entries, got {}", v.len())))
    }

    /// A path-valued key that must be set.
    pub fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.optional_path(key)
            .ok_or_else(|| CliError::Config(format!("`{key}` must be set for {}", self.command)))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key).trim();
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").expect("validated in resolve")
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }
}
