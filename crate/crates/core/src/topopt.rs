//! SIMP compliance minimization on a regular grid of bilinear quadrilateral
//! plane-stress elements, following the classic 99-line procedure
//! (sensitivity filter, optimality-criteria update with a move limit).
//!
//! Elements are indexed row-major, `e = ely * nelx + elx` with `ely = 0`
//! at the top edge. Nodes are numbered column by column (`nely + 1` per
//! column) which keeps the stiffness matrix banded.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{self, Frame};
use crate::error::{Error, IoContext, Result};
use crate::pgm::{self, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadCase {
    /// Half MBB beam: symmetry (x-fixed) on the left edge, roller at the
    /// bottom-right corner, unit downward load at the top-left corner.
    Mbb,
    /// Left edge clamped, unit downward load at the middle of the right edge.
    Cantilever,
}

impl FromStr for LoadCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbb" => Ok(LoadCase::Mbb),
            "cantilever" => Ok(LoadCase::Cantilever),
            _ => Err(Error::Config(format!("unknown load case {s:?} (expected mbb or cantilever)"))),
        }
    }
}

impl std::fmt::Display for LoadCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LoadCase::Mbb => "mbb",
            LoadCase::Cantilever => "cantilever",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopOptConfig {
    pub nelx: usize,
    pub nely: usize,
    pub volfrac: f64,
    pub penal: f64,
    pub rmin: f64,
    pub x_min: f64,
    pub max_iters: usize,
    pub move_limit: f64,
    /// Exponent of the OC fixed-point update.
    pub damping: f64,
    /// Stop once the largest density change of an iteration falls below this.
    pub change_tol: f64,
    pub load_case: LoadCase,
    pub youngs_modulus: f64,
    pub poisson: f64,
}

impl Default for TopOptConfig {
    fn default() -> Self {
        TopOptConfig {
            nelx: 60,
            nely: 20,
            volfrac: 0.5,
            penal: 3.0,
            rmin: 1.5,
            x_min: 0.001,
            max_iters: 100,
            move_limit: 0.2,
            damping: 0.5,
            change_tol: 0.01,
            load_case: LoadCase::Mbb,
            youngs_modulus: 1.0,
            poisson: 0.3,
        }
    }
}

impl TopOptConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.nelx == 0 || self.nely == 0 {
            return err(format!("mesh must be non-empty, got {}x{}", self.nelx, self.nely));
        }
        if !(self.volfrac > 0.0 && self.volfrac < 1.0) {
            return err(format!("volfrac must lie in (0, 1), got {}", self.volfrac));
        }
        if !(self.x_min > 0.0 && self.x_min < 1.0) {
            return err(format!("x_min must lie in (0, 1), got {}", self.x_min));
        }
        if self.volfrac < self.x_min {
            return err("volfrac is below x_min".into());
        }
        if !(self.penal >= 1.0) {
            return err(format!("penal must be at least 1, got {}", self.penal));
        }
        if !(self.rmin >= 1.0) {
            return err(format!("rmin must be at least 1, got {}", self.rmin));
        }
        if !(self.move_limit > 0.0) || !(self.damping > 0.0) || !(self.youngs_modulus > 0.0) {
            return err("move limit, damping and Young's modulus must be positive".into());
        }
        if !(self.poisson > -1.0 && self.poisson < 0.5) {
            return err(format!("poisson ratio must lie in (-1, 0.5), got {}", self.poisson));
        }
        Ok(())
    }

    pub fn elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn dofs(&self) -> usize {
        2 * (self.nelx + 1) * (self.nely + 1)
    }

    /// Global degrees of freedom of element `(elx, ely)`, counter-clockwise
    /// from the lower-left node.
    pub fn element_dofs(&self, elx: usize, ely: usize) -> [usize; 8] {
        let n1 = (self.nely + 1) * elx + ely;
        let n2 = (self.nely + 1) * (elx + 1) + ely;
        [
            2 * n1,
            2 * n1 + 1,
            2 * n2,
            2 * n2 + 1,
            2 * n2 + 2,
            2 * n2 + 3,
            2 * n1 + 2,
            2 * n1 + 3,
        ]
    }

    /// Fixed degrees of freedom (sorted) and the load vector.
    pub fn boundary_conditions(&self) -> (Vec<usize>, Vec<f64>) {
        let ndof = self.dofs();
        let mut force = vec![0.0; ndof];
        let fixed = match self.load_case {
            LoadCase::Mbb => {
                force[1] = -1.0;
                let mut f: Vec<usize> = (0..=self.nely).map(|j| 2 * j).collect();
                f.push(ndof - 1);
                f
            }
            LoadCase::Cantilever => {
                let node = (self.nely + 1) * self.nelx + self.nely / 2;
                force[2 * node + 1] = -1.0;
                (0..2 * (self.nely + 1)).collect()
            }
        };
        (fixed, force)
    }
}

/// Stiffness matrix of a unit square bilinear plane-stress element with
/// unit Young's modulus.
pub fn element_stiffness(nu: f64) -> [[f64; 8]; 8] {
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    const IDX: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let scale = 1.0 / (1.0 - nu * nu);
    let mut ke = [[0.0; 8]; 8];
    for (r, row) in IDX.iter().enumerate() {
        for (c, &i) in row.iter().enumerate() {
            ke[r][c] = scale * k[i];
        }
    }
    ke
}

fn check_densities(config: &TopOptConfig, x: &[f64]) -> Result<()> {
    if x.len() != config.elements() {
        return Err(Error::Config(format!(
            "expected {} densities, got {}",
            config.elements(),
            x.len()
        )));
    }
    if let Some(bad) = x.iter().position(|&v| !(v >= config.x_min - 1e-12 && v <= 1.0 + 1e-12)) {
        return Err(Error::Config(format!(
            "density {} of element {bad} is outside [{}, 1]",
            x[bad], config.x_min
        )));
    }
    Ok(())
}

/// Full global stiffness matrix (row-major, `dofs x dofs`) before
/// constraint elimination. Intended for small meshes and diagnostics.
pub fn assemble_dense(config: &TopOptConfig, x: &[f64]) -> Result<Vec<f64>> {
    check_densities(config, x)?;
    let n = config.dofs();
    let ke = element_stiffness(config.poisson);
    let mut k = vec![0.0; n * n];
    for ely in 0..config.nely {
        for elx in 0..config.nelx {
            let scale = config.youngs_modulus * x[ely * config.nelx + elx].powf(config.penal);
            let dofs = config.element_dofs(elx, ely);
            for (a, &ia) in dofs.iter().enumerate() {
                for (b, &ib) in dofs.iter().enumerate() {
                    k[ia * n + ib] += scale * ke[a][b];
                }
            }
        }
    }
    Ok(k)
}

/// Banded symmetric positive definite matrix stored as its lower band.
struct BandMatrix {
    n: usize,
    bw: usize,
    /// `data[i * (bw + 1) + (i - j)]` holds entry `(i, j)` for `i - bw <= j <= i`.
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.bw);
        &mut self.data[i * (self.bw + 1) + (i - j)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    /// In-place Cholesky factorization `A = L L^T`.
    fn factor(&mut self) -> Result<()> {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                for k in lo.max(j.saturating_sub(self.bw))..j {
                    sum -= self.get(i, k) * self.get(j, k);
                }
                if i == j {
                    let diag = self.get(i, i);
                    if !(sum > 1e-12 * diag.abs()) || !sum.is_finite() {
                        return Err(Error::Solver(format!(
                            "stiffness matrix is singular or indefinite at equation {i} (pivot {sum:e})"
                        )));
                    }
                    *self.at(i, i) = sum.sqrt();
                } else {
                    *self.at(i, j) = sum / self.get(j, j);
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.get(i, k) * b[k];
            }
            b[i] = sum / self.get(i, i);
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut sum = b[i];
            for k in i + 1..=hi {
                sum -= self.get(k, i) * b[k];
            }
            b[i] = sum / self.get(i, i);
        }
    }
}

/// Solve `K U = F` for the configured load case.
pub fn fe_solve(config: &TopOptConfig, x: &[f64]) -> Result<Vec<f64>> {
    let (_, force) = config.boundary_conditions();
    fe_solve_with_load(config, x, &force)
}

/// Solve `K U = F` for an arbitrary load vector; fixed degrees of freedom
/// are eliminated and their displacements are zero.
pub fn fe_solve_with_load(config: &TopOptConfig, x: &[f64], force: &[f64]) -> Result<Vec<f64>> {
    check_densities(config, x)?;
    let ndof = config.dofs();
    if force.len() != ndof {
        return Err(Error::Config(format!("load vector has {} entries, expected {ndof}", force.len())));
    }
    let (fixed, _) = config.boundary_conditions();
    let mut reduced = vec![usize::MAX; ndof];
    let mut free = Vec::with_capacity(ndof);
    let mut fixed_iter = fixed.iter().peekable();
    for d in 0..ndof {
        if fixed_iter.peek() == Some(&&d) {
            fixed_iter.next();
        } else {
            reduced[d] = free.len();
            free.push(d);
        }
    }
    let bw = 2 * config.nely + 5;
    let mut k = BandMatrix::new(free.len(), bw);
    let ke = element_stiffness(config.poisson);
    for ely in 0..config.nely {
        for elx in 0..config.nelx {
            let scale = config.youngs_modulus * x[ely * config.nelx + elx].powf(config.penal);
            let dofs = config.element_dofs(elx, ely);
            for a in 0..8 {
                let ra = reduced[dofs[a]];
                if ra == usize::MAX {
                    continue;
                }
                for b in 0..8 {
                    let rb = reduced[dofs[b]];
                    if rb != usize::MAX && rb <= ra {
                        *k.at(ra, rb) += scale * ke[a][b];
                    }
                }
            }
        }
    }
    k.factor()?;
    let mut rhs: Vec<f64> = free.iter().map(|&d| force[d]).collect();
    k.solve(&mut rhs);
    let mut u = vec![0.0; ndof];
    for (r, &d) in free.iter().enumerate() {
        u[d] = rhs[r];
    }
    Ok(u)
}

/// Unpenalized element strain energies `u_e^T (E k0) u_e`.
pub fn element_energies(config: &TopOptConfig, u: &[f64]) -> Vec<f64> {
    let ke = element_stiffness(config.poisson);
    let mut out = vec![0.0; config.elements()];
    for ely in 0..config.nely {
        for elx in 0..config.nelx {
            let dofs = config.element_dofs(elx, ely);
            let ue: Vec<f64> = dofs.iter().map(|&d| u[d]).collect();
            let mut e = 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    e += ue[a] * ke[a][b] * ue[b];
                }
            }
            out[ely * config.nelx + elx] = config.youngs_modulus * e;
        }
    }
    out
}

/// Compliance `sum_e x_e^p u_e^T k0 u_e`.
pub fn compliance(config: &TopOptConfig, x: &[f64], u: &[f64]) -> f64 {
    element_energies(config, u)
        .iter()
        .zip(x)
        .map(|(e, xe)| xe.powf(config.penal) * e)
        .sum()
}

/// Compliance derivatives `-p x_e^(p-1) u_e^T k0 u_e`.
pub fn sensitivities(config: &TopOptConfig, x: &[f64], u: &[f64]) -> Vec<f64> {
    element_energies(config, u)
        .iter()
        .zip(x)
        .map(|(e, xe)| -config.penal * xe.powf(config.penal - 1.0) * e)
        .collect()
}

/// Mesh-independency filter: each sensitivity becomes a density-weighted
/// average over neighbours within `rmin`, with linearly decaying weights
/// `rmin - distance`. A radius below 1 leaves the field unchanged.
pub fn sensitivity_filter(nelx: usize, nely: usize, x: &[f64], dc: &[f64], rmin: f64) -> Vec<f64> {
    if rmin < 1.0 {
        return dc.to_vec();
    }
    let reach = rmin.floor() as usize;
    let mut out = vec![0.0; dc.len()];
    for i in 0..nelx {
        for j in 0..nely {
            let mut total = 0.0;
            let mut acc = 0.0;
            for k in i.saturating_sub(reach)..(i + reach + 1).min(nelx) {
                for l in j.saturating_sub(reach)..(j + reach + 1).min(nely) {
                    let di = i as f64 - k as f64;
                    let dj = j as f64 - l as f64;
                    let w = (rmin - (di * di + dj * dj).sqrt()).max(0.0);
                    total += w;
                    acc += w * x[l * nelx + k] * dc[l * nelx + k];
                }
            }
            out[j * nelx + i] = acc / (x[j * nelx + i] * total);
        }
    }
    out
}

/// Optimality-criteria update. Bisects the volume multiplier until the new
/// mean density matches the target; densities are clamped to `[x_min, 1]`
/// and to `move_limit` around their previous value.
pub fn oc_update(config: &TopOptConfig, x: &[f64], dc: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = dc.iter().position(|&d| !(d <= 0.0)) {
        return Err(Error::Solver(format!(
            "sensitivity {} of element {bad} is not non-positive",
            dc[bad]
        )));
    }
    let target = config.volfrac;
    let update = |lambda: f64| -> Vec<f64> {
        x.iter()
            .zip(dc)
            .map(|(&xe, &d)| {
                let trial = xe * (-d / lambda).powf(config.damping);
                trial
                    .min(xe + config.move_limit)
                    .min(1.0)
                    .max(xe - config.move_limit)
                    .max(config.x_min)
            })
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut lo = 0.0;
    let mut hi = 1e5;
    let mut expansions = 0;
    while mean(&update(hi)) > target {
        hi *= 10.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::Solver("volume multiplier bisection failed to bracket".into()));
        }
    }
    let mut xnew = update(hi);
    for _ in 0..200 {
        if (hi - lo) <= 1e-13 * (hi + lo) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        xnew = update(mid);
        if mean(&xnew) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let vol = mean(&xnew);
    if (vol - target).abs() >= 1e-4 {
        return Err(Error::Solver(format!(
            "volume multiplier bisection failed to bracket: reached volume fraction {vol:.6}, target {target}"
        )));
    }
    Ok(xnew)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderConfig {
    /// Integer pixel replication factor per element.
    pub upsample: usize,
    /// Keep only the lower half (rounded up) of the image.
    pub trim: bool,
    /// Remove fully blank (white) border rows and columns.
    pub crop: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            upsample: 2,
            trim: false,
            crop: false,
        }
    }
}

/// Gray level `round(255 (1 - x_e))` per element: solid is black, void white.
pub fn render_frame(nelx: usize, nely: usize, x: &[f64], render: &RenderConfig) -> Result<GrayImage> {
    if render.upsample == 0 {
        return Err(Error::Config("upsample factor must be at least 1".into()));
    }
    let s = render.upsample;
    let (w, h) = (nelx * s, nely * s);
    let mut pixels = vec![0u8; w * h];
    for r in 0..h {
        for c in 0..w {
            let xe = x[(r / s) * nelx + c / s].clamp(0.0, 1.0);
            pixels[r * w + c] = (255.0 * (1.0 - xe)).round() as u8;
        }
    }
    let mut img = GrayImage::new(w, h, pixels)?;
    if render.trim {
        img = img.rows(h / 2, h);
    }
    if render.crop {
        img = crop_blank(&img);
    }
    Ok(img)
}

fn crop_blank(img: &GrayImage) -> GrayImage {
    let blank_row = |r: usize| (0..img.width()).all(|c| img.get(r, c) == 255);
    let blank_col = |c: usize| (0..img.height()).all(|r| img.get(r, c) == 255);
    let Some(top) = (0..img.height()).find(|&r| !blank_row(r)) else {
        return img.clone();
    };
    let bottom = (0..img.height()).rev().find(|&r| !blank_row(r)).unwrap();
    let left = (0..img.width()).find(|&c| !blank_col(c)).unwrap();
    let right = (0..img.width()).rev().find(|&c| !blank_col(c)).unwrap();
    let w = right - left + 1;
    let mut pixels = Vec::with_capacity(w * (bottom - top + 1));
    for r in top..=bottom {
        pixels.extend((left..=right).map(|c| img.get(r, c)));
    }
    GrayImage::new(w, bottom - top + 1, pixels).expect("non-empty crop")
}

/// State of one optimization run.
#[derive(Clone, Debug)]
pub struct TopOptState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub compliance: f64,
    pub iter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Compliance of the design entering this iteration.
    pub compliance: f64,
    /// Mean density after the OC update.
    pub volume: f64,
    /// Largest density change made by the OC update.
    pub change: f64,
}

#[derive(Clone, Debug)]
pub struct CampaignOutcome {
    /// One frame per iteration, labelled with that design's compliance.
    pub frames: Vec<Frame>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub final_state: TopOptState,
}

impl CampaignOutcome {
    pub fn initial_compliance(&self) -> f64 {
        self.history.first().map(|h| h.compliance).unwrap_or(f64::NAN)
    }

    pub fn final_compliance(&self) -> f64 {
        self.history.last().map(|h| h.compliance).unwrap_or(f64::NAN)
    }
}

/// Iterate FE solve, sensitivity filter and OC update from a uniform
/// design until the density change drops below `change_tol` or
/// `max_iters` is reached.
pub fn run(config: &TopOptConfig, render: &RenderConfig) -> Result<CampaignOutcome> {
    config.validate()?;
    let mut state = TopOptState {
        x: vec![config.volfrac; config.elements()],
        u: Vec::new(),
        compliance: f64::NAN,
        iter: 0,
    };
    let mut frames = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    while state.iter < config.max_iters {
        state.iter += 1;
        state.u = fe_solve(config, &state.x)?;
        state.compliance = compliance(config, &state.x, &state.u);
        if !state.compliance.is_finite() || state.compliance <= 0.0 {
            return Err(Error::Numerical(format!(
                "compliance {} at iteration {}",
                state.compliance, state.iter
            )));
        }
        frames.push(Frame {
            image: render_frame(config.nelx, config.nely, &state.x, render)?,
            label_raw: state.compliance,
            iter: state.iter,
        });
        let dc = sensitivities(config, &state.x, &state.u);
        let dc = sensitivity_filter(config.nelx, config.nely, &state.x, &dc, config.rmin);
        let xnew = oc_update(config, &state.x, &dc)?;
        let change = xnew
            .iter()
            .zip(&state.x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let volume = xnew.iter().sum::<f64>() / xnew.len() as f64;
        history.push(IterationRecord {
            iter: state.iter,
            compliance: state.compliance,
            volume,
            change,
        });
        state.x = xnew;
        if change < config.change_tol {
            converged = true;
            break;
        }
    }
    Ok(CampaignOutcome {
        frames,
        history,
        converged,
        final_state: state,
    })
}

/// Run a campaign and write one PGM per iteration plus `manifest.csv`
/// (`iter,image_path,compliance`) into `output_dir`.
pub fn run_campaign(config: &TopOptConfig, render: &RenderConfig, output_dir: &Path) -> Result<(CampaignOutcome, PathBuf)> {
    let outcome = run(config, render)?;
    std::fs::create_dir_all(output_dir).at(output_dir)?;
    let mut rows = Vec::with_capacity(outcome.frames.len());
    for f in &outcome.frames {
        let name = format!("frame_{:04}.pgm", f.iter);
        pgm::write_pgm(&f.image, &output_dir.join(&name))?;
        rows.push(dataset::ManifestRow {
            iter: f.iter,
            image_path: name,
            compliance: f.label_raw,
            label_norm: None,
        });
    }
    let manifest = output_dir.join(dataset::MANIFEST_FILE);
    dataset::write_manifest(&manifest, &rows)?;
    Ok((outcome, manifest))
}
