//! Labelled frame collections, label normalization, histograms and
//! train/evaluation splits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, IoContext, Result};
use crate::pgm::{self, GrayImage};
use crate::rng;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const NORM_SPEC_FILE: &str = "norm_spec.txt";
pub const DEFAULT_LOG_BASE: f64 = 20.0;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

/// One grayscale frame with its raw compliance label.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: GrayImage,
    pub label_raw: f64,
    pub iter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    MinMax,
    ZScore,
    /// Logarithm with the given base.
    Log(f64),
}

impl NormKind {
    pub fn parse(name: &str, log_base: f64) -> Result<Self> {
        match name {
            "minmax" => Ok(NormKind::MinMax),
            "zscore" => Ok(NormKind::ZScore),
            "log" => Ok(NormKind::Log(log_base)),
            _ => Err(Error::Config(format!(
                "unknown normalization {name:?} (expected minmax, zscore or log)"
            ))),
        }
    }
}

/// A fitted normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormSpec {
    MinMax { min: f64, max: f64 },
    ZScore { mean: f64, std: f64 },
    Log { base: f64 },
}

impl NormSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NormSpec::MinMax { min, max } => min.is_finite() && max.is_finite() && max > min,
            NormSpec::ZScore { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            NormSpec::Log { base } => base.is_finite() && base > 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("invalid normalization constants {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormSpec::MinMax { .. } => "minmax",
            NormSpec::ZScore { .. } => "zscore",
            NormSpec::Log { .. } => "log",
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        match *self {
            NormSpec::MinMax { min, max } => (y - min) / (max - min),
            NormSpec::ZScore { mean, std } => (y - mean) / std,
            NormSpec::Log { base } => y.ln() / base.ln(),
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            NormSpec::MinMax { min, max } => min + v * (max - min),
            NormSpec::ZScore { mean, std } => mean + v * std,
            NormSpec::Log { base } => base.powf(v),
        }
    }

    /// `key value` lines; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        match *self {
            NormSpec::MinMax { min, max } => format!("kind minmax\ny_min {min:?}\ny_max {max:?}\n"),
            NormSpec::ZScore { mean, std } => format!("kind zscore\nmean {mean:?}\nstd {std:?}\n"),
            NormSpec::Log { base } => format!("kind log\nbase {base:?}\n"),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut values = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Data(format!("malformed normalization line {line:?}")))?;
            let value = value.trim();
            if key == "kind" {
                kind = Some(value.to_string());
            } else {
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::Data(format!("invalid value for {key}: {value:?}")))?;
                values.insert(key.to_string(), v);
            }
        }
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::Data(format!("normalization spec is missing {k}")))
        };
        let spec = match kind.as_deref() {
            Some("minmax") => NormSpec::MinMax {
                min: get("y_min")?,
                max: get("y_max")?,
            },
            Some("zscore") => NormSpec::ZScore {
                mean: get("mean")?,
                std: get("std")?,
            },
            Some("log") => NormSpec::Log { base: get("base")? },
            other => return Err(Error::Data(format!("unknown normalization kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Fit a normalization to `labels` and apply it.
pub fn normalize(labels: &[f64], kind: NormKind) -> Result<(Vec<f64>, NormSpec)> {
    if labels.is_empty() {
        return Err(Error::Data("cannot normalize an empty label set".into()));
    }
    if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("label of sample {i} is not finite ({})", labels[i])));
    }
    let spec = match kind {
        NormKind::MinMax => {
            let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
            let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= min {
                return Err(Error::Data(format!("min-max normalization needs distinct labels (all equal {min})")));
            }
            NormSpec::MinMax { min, max }
        }
        NormKind::ZScore => {
            let n = labels.len() as f64;
            let mean = labels.iter().sum::<f64>() / n;
            let var = labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
            if var <= 0.0 {
                return Err(Error::Data("z-score normalization needs a nonzero standard deviation".into()));
            }
            NormSpec::ZScore { mean, std: var.sqrt() }
        }
        NormKind::Log(base) => {
            if !(base > 1.0) {
                return Err(Error::Config(format!("log base must exceed 1, got {base}")));
            }
            if let Some(i) = labels.iter().position(|&y| y <= 0.0) {
                return Err(Error::Data(format!(
                    "log normalization needs positive labels; sample {i} is {}",
                    labels[i]
                )));
            }
            NormSpec::Log { base }
        }
    };
    Ok((labels.iter().map(|&y| spec.apply(y)).collect(), spec))
}

pub fn denormalize(value: f64, spec: &NormSpec) -> f64 {
    spec.invert(value)
}

/// Equal-width histogram: `edges.len() == counts.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Equal-width bins over `[min, max]`. A degenerate range yields a single bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::Data("histogram of an empty set".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("histogram input contains non-finite values".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(Histogram {
            edges: vec![min, max],
            counts: vec![values.len()],
        });
    }
    let width = (max - min) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { max } else { min + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - min) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn class_histogram(labels: &[f64], bins: usize) -> Result<Histogram> {
    histogram(labels, bins)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub iter: usize,
    pub image_path: String,
    pub compliance: f64,
    pub label_norm: Option<f64>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Write `iter,image_path,compliance[,label_norm]`. The extra column is
/// emitted when every row carries a normalized label.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let extended = !rows.is_empty() && rows.iter().all(|r| r.label_norm.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut header = vec!["iter", "image_path", "compliance"];
    if extended {
        header.push("label_norm");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.iter.to_string(), r.image_path.clone(), fmt_f64(r.compliance)];
        if extended {
            rec.push(fmt_f64(r.label_norm.unwrap()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, bytes).at(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let bytes = fs::read(path).at(path)?;
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let extended = match names.as_slice() {
        ["iter", "image_path", "compliance"] => false,
        ["iter", "image_path", "compliance", "label_norm"] => true,
        _ => return Err(bad(format!("unexpected manifest header {names:?}"))),
    };
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("row {} is short", line + 1)));
        let num = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse().map_err(|_| bad(format!("row {}: invalid number {s:?}", line + 1)))
        };
        rows.push(ManifestRow {
            iter: field(0)?
                .parse()
                .map_err(|_| bad(format!("row {}: invalid iteration", line + 1)))?,
            image_path: field(1)?.to_string(),
            compliance: num(2)?,
            label_norm: if extended { Some(num(3)?) } else { None },
        });
    }
    Ok(rows)
}

/// An ordered frame collection, optionally with a fitted normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    pub frames: Vec<Frame>,
    pub norm: Option<NormSpec>,
}

impl FrameDataset {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let shape = (first.image.height(), first.image.width());
            for (i, f) in frames.iter().enumerate() {
                if (f.image.height(), f.image.width()) != shape {
                    return Err(Error::Data(format!(
                        "frame {i} is {}x{}, expected {}x{}",
                        f.image.height(),
                        f.image.width(),
                        shape.0,
                        shape.1
                    )));
                }
            }
        }
        Ok(FrameDataset { frames, norm: None })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of every frame.
    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.image.height(), f.image.width()))
    }

    pub fn labels_raw(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.label_raw).collect()
    }

    /// Normalized labels, recomputed from the raw labels.
    pub fn labels_norm(&self) -> Result<Vec<f64>> {
        let spec = self
            .norm
            .ok_or_else(|| Error::State("dataset has no normalization".into()))?;
        Ok(self.frames.iter().map(|f| spec.apply(f.label_raw)).collect())
    }

    /// Fit a normalization on this dataset's labels.
    pub fn fit_normalization(&mut self, kind: NormKind) -> Result<NormSpec> {
        let (_, spec) = normalize(&self.labels_raw(), kind)?;
        self.norm = Some(spec);
        Ok(spec)
    }

    pub fn with_normalization(mut self, spec: NormSpec) -> Result<Self> {
        spec.validate()?;
        if let NormSpec::Log { .. } = spec {
            if let Some(i) = self.frames.iter().position(|f| f.label_raw <= 0.0) {
                return Err(Error::Data(format!("log normalization needs positive labels; sample {i} is not")));
            }
        }
        self.norm = Some(spec);
        Ok(self)
    }

    pub fn concat(parts: Vec<FrameDataset>) -> Result<Self> {
        FrameDataset::new(parts.into_iter().flat_map(|d| d.frames).collect())
    }

    /// Frames `indices` as a `[n, 1, H, W]` tensor with pixels in `[0, 1]`.
    pub fn images(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<Tensor> = indices.iter().map(|&i| self.frames[i].image.to_tensor()).collect();
        Tensor::stack(&items)
    }

    pub fn subset(&self, indices: &[usize]) -> FrameDataset {
        FrameDataset {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            norm: self.norm,
        }
    }
}

/// Write `sample_NNNNN.pgm` files, the manifest (extended when normalized)
/// and the normalization sidecar. Returns the manifest path.
pub fn save_dataset(dataset: &FrameDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let mut rows = Vec::with_capacity(dataset.len());
    for (i, f) in dataset.frames.iter().enumerate() {
        let name = format!("sample_{i:05}.pgm");
        pgm::write_pgm(&f.image, &dir.join(&name))?;
        rows.push(ManifestRow {
            iter: f.iter,
            image_path: name,
            compliance: f.label_raw,
            label_norm: dataset.norm.map(|s| s.apply(f.label_raw)),
        });
    }
    let sidecar = dir.join(NORM_SPEC_FILE);
    match dataset.norm {
        Some(spec) => fs::write(&sidecar, spec.to_text()).at(&sidecar)?,
        None if sidecar.exists() => fs::remove_file(&sidecar).at(&sidecar)?,
        None => {}
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Load a manifest and every frame it references. Image paths are
/// resolved relative to the manifest's directory. A `norm_spec.txt` next to
/// the manifest is loaded and checked against any `label_norm` column.
pub fn load_dataset(manifest_path: &Path) -> Result<FrameDataset> {
    let rows = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(rows.len());
    for r in &rows {
        let path = base.join(&r.image_path);
        if !path.exists() {
            return Err(Error::Data(format!(
                "{}: referenced frame {} does not exist",
                manifest_path.display(),
                path.display()
            )));
        }
        let image = pgm::read_pgm(&path)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if (first.image.width(), first.image.height()) != (image.width(), image.height()) {
                return Err(Error::Data(format!(
                    "{}: frame is {}x{}, expected {}x{}",
                    path.display(),
                    image.height(),
                    image.width(),
                    first.image.height(),
                    first.image.width()
                )));
            }
        }
        frames.push(Frame {
            image,
            label_raw: r.compliance,
            iter: r.iter,
        });
    }
    let mut ds = FrameDataset::new(frames)?;
    let sidecar = base.join(NORM_SPEC_FILE);
    if sidecar.exists() {
        let spec = NormSpec::from_text(&fs::read_to_string(&sidecar).at(&sidecar)?)
            .map_err(|e| Error::Data(format!("{}: {e}", sidecar.display())))?;
        for (i, r) in rows.iter().enumerate() {
            if let Some(v) = r.label_norm {
                let expect = spec.apply(r.compliance);
                if (v - expect).abs() > 1e-12 * expect.abs().max(1.0) {
                    return Err(Error::Data(format!(
                        "{}: row {i} label_norm {v} disagrees with {} ({expect})",
                        manifest_path.display(),
                        NORM_SPEC_FILE
                    )));
                }
            }
        }
        ds.norm = Some(spec);
    } else if rows.iter().any(|r| r.label_norm.is_some()) {
        return Err(Error::Data(format!(
            "{}: label_norm column present but {} is missing",
            manifest_path.display(),
            NORM_SPEC_FILE
        )));
    }
    Ok(ds)
}

/// Seeded shuffle into `(train, eval)`; each part keeps the original order.
pub fn split(dataset: &FrameDataset, eval_fraction: f64, seed: u64) -> Result<(FrameDataset, FrameDataset)> {
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(Error::Config(format!("eval fraction must lie in [0, 1), got {eval_fraction}")));
    }
    let n = dataset.len();
    let n_eval = (n as f64 * eval_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let mut eval = idx[..n_eval].to_vec();
    let mut train = idx[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&eval)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_fixed_points() {
        let (v, spec) = normalize(&[3.0, 7.0, 5.0], NormKind::MinMax).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.5]);
        assert_eq!(spec.invert(0.5), 5.0);
        let (v, _) = normalize(&[1.0, 2.0, 3.0], NormKind::ZScore).unwrap();
        assert_eq!(v[1], 0.0);
        let (v, _) = normalize(&[20.0, 400.0, 1.0], NormKind::Log(20.0)).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 0.0]);
        assert_eq!(denormalize(1.0, &NormSpec::Log { base: 20.0 }), 20.0);
        assert_eq!(denormalize(0.5, &NormSpec::MinMax { min: 0.0, max: 150.0 }), 75.0);
    }

    #[test]
    fn norm_errors() {
        let e = normalize(&[1.0, -2.0], NormKind::Log(20.0)).unwrap_err();
        assert!(e.to_string().contains("sample 1"));
        assert!(normalize(&[4.0, 4.0], NormKind::ZScore).is_err());
        assert!(normalize(&[], NormKind::MinMax).is_err());
    }

    #[test]
    fn norm_spec_text_round_trip() {
        for spec in [
            NormSpec::MinMax { min: 0.1, max: 1.0 / 3.0 },
            NormSpec::ZScore { mean: 203.30728792573, std: 1e-7 },
            NormSpec::Log { base: 20.0 },
        ] {
            assert_eq!(NormSpec::from_text(&spec.to_text()).unwrap(), spec);
        }
    }

    #[test]
    fn histogram_cases() {
        let h = class_histogram(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges, vec![1.0, 2.5, 4.0]);
        let h = class_histogram(&[7.0; 5], 10).unwrap();
        assert_eq!(h.counts, vec![5]);
    }

    #[test]
    fn split_edge_cases() {
        let frames = (0..7)
            .map(|i| Frame {
                image: GrayImage::filled(2, 2, i as u8),
                label_raw: 1.0 + i as f64,
                iter: i,
            })
            .collect();
        let ds = FrameDataset::new(frames).unwrap();
        let (train, eval) = split(&ds, 0.0, 3).unwrap();
        assert_eq!((train.len(), eval.len()), (7, 0));
        let a = split(&ds, 0.3, 9).unwrap();
        let b = split(&ds, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 2);
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn mismatched_frames_rejected() {
        let f = |w| Frame {
            image: GrayImage::filled(w, 2, 0),
            label_raw: 1.0,
            iter: 0,
        };
        assert!(FrameDataset::new(vec![f(2), f(3)]).is_err());
    }
}
