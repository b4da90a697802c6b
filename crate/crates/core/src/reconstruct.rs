//! Timeline densification: interpolate compliance along the iteration axis
//! through the real frames, then place labelled pseudo frames into evenly
//! spaced slots by nearest compliance.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cic::{self, FrameRegressor};
use crate::dataset::{ManifestRow, NormSpec};
use crate::error::{Error, IoContext, Result};
use crate::pgm::GrayImage;

/// Largest node count accepted by the global interpolant.
pub const MAX_GLOBAL_NODES: usize = 12;
pub const TIMELINE_CSV: &str = "timeline.csv";
pub const TIMELINE_SVG: &str = "timeline.svg";
pub const EMPTY_SLOTS_FILE: &str = "empty_slots.txt";

fn check_nodes(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::Data(format!("interpolation needs at least 2 nodes, got {}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite interpolation node".into()));
    }
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if xs[i] == xs[j] {
                return Err(Error::Data(format!("duplicate interpolation node x = {}", xs[i])));
            }
        }
    }
    Ok(())
}

/// Values of every basis polynomial `p_i(q) = prod_{j != i} (q - x_j) / (x_i - x_j)`.
pub fn lagrange_basis(xs: &[f64], q: f64) -> Result<Vec<f64>> {
    check_nodes(xs)?;
    Ok(basis_unchecked(xs, q))
}

fn basis_unchecked(xs: &[f64], q: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            xs.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| (q - xj) / (xs[i] - xj))
                .product()
        })
        .collect()
}

/// Global interpolant through all nodes. Limited to [`MAX_GLOBAL_NODES`];
/// longer series should use [`piecewise_interpolate`].
pub fn lagrange_eval(nodes: &[(f64, f64)], q: f64) -> Result<f64> {
    if nodes.len() > MAX_GLOBAL_NODES {
        return Err(Error::Config(format!(
            "global interpolation is limited to {MAX_GLOBAL_NODES} nodes (got {}); use piecewise mode",
            nodes.len()
        )));
    }
    let xs: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let basis = lagrange_basis(&xs, q)?;
    Ok(basis.iter().zip(nodes).map(|(p, (_, y))| p * y).sum())
}

/// Local cubic through the four nodes around `q`; linear between the two
/// bracketing nodes when fewer than four exist. Nodes must be sorted by x.
pub fn piecewise_interpolate(points: &[(f64, f64)], q: f64) -> Result<f64> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    if xs.len() < 2 {
        return Err(Error::Data(format!("interpolation needs at least 2 nodes, got {}", xs.len())));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Data("piecewise nodes must be strictly increasing in x".into()));
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if !(lo..=hi).contains(&q) {
        return Err(Error::Data(format!("query {q} lies outside [{lo}, {hi}]; extrapolation is not supported")));
    }
    if let Some(j) = xs.iter().position(|&x| x == q) {
        return Ok(points[j].1);
    }
    // Interval index with xs[i] < q < xs[i+1].
    let i = xs.partition_point(|&x| x < q) - 1;
    if points.len() < 4 {
        let ((x0, y0), (x1, y1)) = (points[i], points[i + 1]);
        let t = (q - x0) / (x1 - x0);
        return Ok(y0 + t * (y1 - y0));
    }
    let start = i.saturating_sub(1).min(points.len() - 4);
    let window = &points[start..start + 4];
    let wx: Vec<f64> = window.iter().map(|p| p.0).collect();
    Ok(basis_unchecked(&wx, q).iter().zip(window).map(|(p, (_, y))| p * y).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Piecewise,
    Global,
}

impl FromStr for Interpolation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise" => Ok(Interpolation::Piecewise),
            "global" => Ok(Interpolation::Global),
            other => Err(Error::Config(format!("unknown interpolation mode {other:?} (piecewise|global)"))),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Piecewise => "piecewise",
            Interpolation::Global => "global",
        })
    }
}

impl Interpolation {
    pub fn eval(self, nodes: &[(f64, f64)], q: f64) -> Result<f64> {
        match self {
            Interpolation::Piecewise => piecewise_interpolate(nodes, q),
            Interpolation::Global => lagrange_eval(nodes, q),
        }
    }
}

/// Physical-unit compliance for each pseudo frame.
pub fn label_pseudo_frames(model: &dyn FrameRegressor, norm: &NormSpec, frames: &[GrayImage]) -> Result<Vec<f64>> {
    let (h, w) = model.frame_shape();
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| (f.height(), f.width()) != (h, w)) {
        return Err(Error::Config(format!(
            "pseudo frame {i} is {}x{} but the regressor expects {h}x{w}",
            f.height(),
            f.width()
        )));
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    cic::predict(model, frames, norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Real,
    Pseudo,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Real => "real",
            Origin::Pseudo => "pseudo",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Origin::Real),
            "pseudo" => Ok(Origin::Pseudo),
            other => Err(Error::Data(format!("unknown timeline origin {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelinePoint {
    pub position: f64,
    pub compliance: f64,
    pub frame_ref: PathBuf,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPseudo {
    pub frame_ref: PathBuf,
    pub compliance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmptySlot {
    pub position: f64,
    pub target: f64,
    /// Relative distance to the closest still-unassigned pseudo frame.
    pub nearest_miss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineConfig {
    pub densify_factor: usize,
    /// Relative compliance tolerance for filling a slot.
    pub tolerance: f64,
    pub interpolation: Interpolation,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        TimelineConfig {
            densify_factor: 4,
            tolerance: 0.1,
            interpolation: Interpolation::Piecewise,
        }
    }
}

impl TimelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densify_factor == 0 {
            return Err(Error::Config("densify_factor must be at least 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::Config(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionTimeline {
    pub points: Vec<TimelinePoint>,
    pub densify_factor: usize,
    pub empty_slots: Vec<EmptySlot>,
}

impl ReconstructionTimeline {
    pub fn count(&self, origin: Origin) -> usize {
        self.points.iter().filter(|p| p.origin == origin).count()
    }
}

/// Open `densify_factor - 1` uniform slots between consecutive real
/// iterations and fill them in position order, each with the unused pseudo
/// frame nearest the interpolated compliance (ties go to the lower index).
pub fn build_timeline(
    real: &[ManifestRow],
    pseudo: &[LabeledPseudo],
    config: &TimelineConfig,
) -> Result<ReconstructionTimeline> {
    config.validate()?;
    if real.is_empty() {
        return Err(Error::Data("real manifest is empty".into()));
    }
    let mut rows: Vec<&ManifestRow> = real.iter().collect();
    rows.sort_by_key(|r| r.iter);
    if let Some(w) = rows.windows(2).find(|w| w[0].iter == w[1].iter) {
        return Err(Error::Data(format!("real manifest repeats iteration {}", w[0].iter)));
    }
    if let Some(r) = rows.iter().find(|r| !(r.compliance.is_finite() && r.compliance > 0.0)) {
        return Err(Error::Data(format!("real frame {} has non-positive compliance {}", r.iter, r.compliance)));
    }
    let nodes: Vec<(f64, f64)> = rows.iter().map(|r| (r.iter as f64, r.compliance)).collect();
    let real_point = |r: &ManifestRow| TimelinePoint {
        position: r.iter as f64,
        compliance: r.compliance,
        frame_ref: PathBuf::from(&r.image_path),
        origin: Origin::Real,
    };

    // Pseudo frames with unusable labels never enter the pool.
    let mut available: Vec<bool> = pseudo.iter().map(|p| p.compliance.is_finite() && p.compliance > 0.0).collect();
    let mut points = Vec::with_capacity(rows.len() * config.densify_factor);
    let mut empty_slots = Vec::new();
    let d = config.densify_factor;
    for (k, r) in rows.iter().enumerate() {
        points.push(real_point(r));
        let Some(next) = rows.get(k + 1) else { break };
        let (a, b) = (r.iter as f64, next.iter as f64);
        for j in 1..d {
            let q = a + (b - a) * j as f64 / d as f64;
            let target = config.interpolation.eval(&nodes, q)?;
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in pseudo.iter().enumerate() {
                if !available[i] {
                    continue;
                }
                let dist = (p.compliance - target).abs();
                if best.is_none_or(|(_, bd)| dist < bd) {
                    best = Some((i, dist));
                }
            }
            let scale = target.abs().max(f64::MIN_POSITIVE);
            match best {
                Some((i, dist)) if dist / scale <= config.tolerance => {
                    available[i] = false;
                    points.push(TimelinePoint {
                        position: q,
                        compliance: pseudo[i].compliance,
                        frame_ref: pseudo[i].frame_ref.clone(),
                        origin: Origin::Pseudo,
                    });
                }
                other => empty_slots.push(EmptySlot {
                    position: q,
                    target,
                    nearest_miss: other.map(|(_, dist)| dist / scale),
                }),
            }
        }
    }
    Ok(ReconstructionTimeline {
        points,
        densify_factor: d,
        empty_slots,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub empty_slots: PathBuf,
}

/// Writes the timeline CSV, a compliance-vs-position SVG and the empty-slot
/// report into `dir`.
pub fn export_timeline(timeline: &ReconstructionTimeline, dir: &Path) -> Result<TimelineFiles> {
    std::fs::create_dir_all(dir).at(dir)?;
    let files = TimelineFiles {
        csv: dir.join(TIMELINE_CSV),
        svg: dir.join(TIMELINE_SVG),
        empty_slots: dir.join(EMPTY_SLOTS_FILE),
    };
    let mut csv = String::from("position,compliance,origin,image_path\n");
    for p in &timeline.points {
        let path = p.frame_ref.to_string_lossy();
        if path.contains([',', '"', '\n']) {
            return Err(Error::Data(format!("frame path {path:?} cannot be written to CSV unquoted")));
        }
        let _ = writeln!(csv, "{:?},{:?},{},{}", p.position, p.compliance, p.origin, path);
    }
    std::fs::write(&files.csv, csv).at(&files.csv)?;
    std::fs::write(&files.svg, timeline_svg(timeline)).at(&files.svg)?;

    let mut report = format!(
        "# {} empty slot(s) of {} opened\nposition,target,nearest_miss_relative\n",
        timeline.empty_slots.len(),
        timeline.empty_slots.len() + timeline.count(Origin::Pseudo)
    );
    for s in &timeline.empty_slots {
        let miss = s.nearest_miss.map_or("none".to_string(), |m| format!("{m:?}"));
        let _ = writeln!(report, "{:?},{:?},{miss}", s.position, s.target);
    }
    std::fs::write(&files.empty_slots, report).at(&files.empty_slots)?;
    Ok(files)
}

pub fn read_timeline(path: &Path) -> Result<Vec<TimelinePoint>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("position,compliance,origin,image_path") {
        return Err(Error::Data(format!("{}: unexpected timeline header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("{}: malformed row {}", path.display(), i + 2));
            let mut it = line.splitn(4, ',');
            let mut next = || it.next().ok_or_else(bad);
            let position = next()?.parse().map_err(|_| bad())?;
            let compliance = next()?.parse().map_err(|_| bad())?;
            let origin = next()?.parse()?;
            let frame_ref = PathBuf::from(next()?);
            Ok(TimelinePoint {
                position,
                compliance,
                frame_ref,
                origin,
            })
        })
        .collect()
}

fn timeline_svg(timeline: &ReconstructionTimeline) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const M: f64 = 40.0;
    let pts = &timeline.points;
    let (x0, x1) = (pts[0].position, pts[pts.len() - 1].position);
    let (c0, c1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.compliance), hi.max(p.compliance)));
    let sx = |x: f64| M + if x1 > x0 { (x - x0) / (x1 - x0) * (W - 2.0 * M) } else { 0.0 };
    let sy = |c: f64| H - M - if c1 > c0 { (c - c0) / (c1 - c0) * (H - 2.0 * M) } else { 0.0 };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{M}\" y=\"20\" font-size=\"12\">compliance {c0:.4} .. {c1:.4} over position {x0} .. {x1}</text>\n<polyline fill=\"none\" stroke=\"gray\" points=\""
    );
    for p in pts {
        let _ = write!(svg, "{:.2},{:.2} ", sx(p.position), sy(p.compliance));
    }
    svg.push_str("\"/>\n");
    for p in pts {
        let (r, fill) = match p.origin {
            Origin::Real => (3.5, "black"),
            Origin::Pseudo => (2.0, "tomato"),
        };
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r}\" fill=\"{fill}\"/>",
            sx(p.position),
            sy(p.compliance)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
