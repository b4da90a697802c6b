//! Tiled convolutional regressor: a frame is cut into a grid of tiles, each
//! tile goes through its own small CNN that ends in a single value, and the
//! grid of those values is fused by a conv/pool/dense head into one
//! normalized compliance estimate. A single-network baseline shares the
//! same training and prediction interface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::dataset::{histogram, FrameDataset, Histogram, NormSpec};
use crate::error::{Error, IoContext, Result};
use crate::nn::checkpoint::{self, BundleIndex};
use crate::nn::gradcheck::{relative_error, GradCheckReport};
use crate::nn::{Gradients, InitConfig, LayerSpec, Network, ParamKind, Padding};
use crate::optim::{self, OptimizerConfig};
use crate::pgm::GrayImage;
use crate::tensor::Tensor;

pub const HISTOGRAM_BINS: usize = 64;

/// Geometry and layer widths of the tiled model.
#[derive(Clone, Debug, PartialEq)]
pub struct CicConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub sub_height: usize,
    pub sub_width: usize,
    /// Output channels of the first two convolutions in every tile network.
    pub channels: [usize; 2],
    pub kernel: usize,
    pub fusion_channels: usize,
}

impl CicConfig {
    /// 2x5 grid of 20x24 tiles on 40x120 frames (a 60x20 mesh rendered at 2x).
    pub fn desk() -> Self {
        CicConfig {
            grid_rows: 2,
            grid_cols: 5,
            sub_height: 20,
            sub_width: 24,
            channels: [4, 4],
            kernel: 5,
            fusion_channels: 8,
        }
    }

    /// 3x10 grid of 39x39 tiles on 117x390 frames, 32 channels.
    pub fn full_scale() -> Self {
        CicConfig {
            grid_rows: 3,
            grid_cols: 10,
            sub_height: 39,
            sub_width: 39,
            channels: [32, 32],
            kernel: 5,
            fusion_channels: 8,
        }
    }

    /// Desk layer widths with a grid sized for `frame_height x frame_width`.
    pub fn for_frame(frame_height: usize, frame_width: usize, grid_rows: usize, grid_cols: usize) -> Result<Self> {
        check_tiling(frame_height, frame_width, grid_rows, grid_cols)?;
        Ok(CicConfig {
            grid_rows,
            grid_cols,
            sub_height: frame_height / grid_rows,
            sub_width: frame_width / grid_cols,
            ..CicConfig::desk()
        })
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.grid_rows * self.sub_height, self.grid_cols * self.sub_width)
    }

    pub fn tiles(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.sub_height == 0 || self.sub_width == 0 {
            return Err(Error::Config("grid and tile sizes must be positive".into()));
        }
        if self.kernel == 0 || self.channels.contains(&0) || self.fusion_channels == 0 {
            return Err(Error::Config("kernel and channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Three conv/pool stages per tile; the last stage has one channel and
    /// a pool that covers the remaining extent, leaving a 1x1x1 output.
    pub fn subnet_specs(&self) -> Vec<LayerSpec> {
        let (mut h, mut w) = (self.sub_height, self.sub_width);
        let mut specs = Vec::new();
        for &c in &self.channels {
            let (ph, pw) = (stage_pool(h), stage_pool(w));
            specs.push(LayerSpec::conv(c, self.kernel, 1, Padding::Same));
            specs.push(LayerSpec::relu());
            specs.push(LayerSpec::max_pool((ph, pw), (ph, pw)));
            h /= ph;
            w /= pw;
        }
        specs.push(LayerSpec::conv(1, self.kernel, 1, Padding::Same));
        specs.push(LayerSpec::max_pool((h, w), (h, w)));
        specs
    }

    /// Conv, overlapping pool, then a dense unit over the tile-value grid.
    pub fn fusion_specs(&self) -> Vec<LayerSpec> {
        let window = (self.grid_rows.min(2), self.grid_cols.min(2));
        vec![
            LayerSpec::conv(self.fusion_channels, 3, 1, Padding::Same),
            LayerSpec::relu(),
            LayerSpec::max_pool(window, (1, 1)),
            LayerSpec::dense(1),
        ]
    }

    fn meta(&self) -> Vec<(String, String)> {
        [
            ("grid_rows", self.grid_rows),
            ("grid_cols", self.grid_cols),
            ("sub_height", self.sub_height),
            ("sub_width", self.sub_width),
            ("channels_1", self.channels[0]),
            ("channels_2", self.channels[1]),
            ("kernel", self.kernel),
            ("fusion_channels", self.fusion_channels),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    fn from_meta(index: &BundleIndex) -> Result<Self> {
        Ok(CicConfig {
            grid_rows: index.parse("grid_rows")?,
            grid_cols: index.parse("grid_cols")?,
            sub_height: index.parse("sub_height")?,
            sub_width: index.parse("sub_width")?,
            channels: [index.parse("channels_1")?, index.parse("channels_2")?],
            kernel: index.parse("kernel")?,
            fusion_channels: index.parse("fusion_channels")?,
        })
    }
}

fn stage_pool(n: usize) -> usize {
    if n < 2 {
        1
    } else if n % 3 == 0 && n % 2 == 1 {
        3
    } else {
        2
    }
}

fn check_tiling(height: usize, width: usize, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 || height % rows != 0 || width % cols != 0 {
        return Err(Error::Config(format!(
            "a {height}x{width} frame cannot be tiled by a {rows}x{cols} grid: \
             height must be divisible by the grid rows and width by the grid columns"
        )));
    }
    Ok(())
}

/// Cut a `[c, H, W]` image into a row-major grid of `[c, H/rows, W/cols]` tiles.
pub fn partition_image(frame: &Tensor, rows: usize, cols: usize) -> Result<Vec<Tensor>> {
    if frame.shape().len() != 3 {
        return Err(Error::Config(format!("expected a [c, h, w] frame, got {:?}", frame.shape())));
    }
    let batched = frame.clone().reshape(&[1, frame.shape()[0], frame.shape()[1], frame.shape()[2]])?;
    partition_batch(&batched, rows, cols)?
        .into_iter()
        .map(|t| {
            let s = t.shape()[1..].to_vec();
            t.reshape(&s)
        })
        .collect()
}

/// Batched form of [`partition_image`] on `[n, c, H, W]`.
pub fn partition_batch(x: &Tensor, rows: usize, cols: usize) -> Result<Vec<Tensor>> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::Config(format!("expected a [n, c, h, w] batch, got {:?}", x.shape())));
    };
    check_tiling(h, w, rows, cols)?;
    let (th, tw) = (h / rows, w / cols);
    let src = x.data();
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for q in 0..cols {
            let mut data = Vec::with_capacity(n * c * th * tw);
            for plane in 0..n * c {
                let base = plane * h * w;
                for y in r * th..(r + 1) * th {
                    let row = base + y * w + q * tw;
                    data.extend_from_slice(&src[row..row + tw]);
                }
            }
            tiles.push(Tensor::new(&[n, c, th, tw], data)?);
        }
    }
    Ok(tiles)
}

/// Inverse of [`partition_image`].
pub fn assemble_tiles(tiles: &[Tensor], rows: usize, cols: usize) -> Result<Tensor> {
    if tiles.len() != rows * cols || tiles.is_empty() {
        return Err(Error::Config(format!("expected {} tiles, got {}", rows * cols, tiles.len())));
    }
    let &[c, th, tw] = tiles[0].shape() else {
        return Err(Error::Config(format!("tiles must be [c, h, w], got {:?}", tiles[0].shape())));
    };
    if tiles.iter().any(|t| t.shape() != tiles[0].shape()) {
        return Err(Error::Config("tiles differ in shape".into()));
    }
    let (h, w) = (th * rows, tw * cols);
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for (k, t) in tiles.iter().enumerate() {
        let (r, q) = (k / cols, k % cols);
        for ch in 0..c {
            for y in 0..th {
                let s = (ch * th + y) * tw;
                let d = ch * h * w + (r * th + y) * w + q * tw;
                dst[d..d + tw].copy_from_slice(&t.data()[s..s + tw]);
            }
        }
    }
    Ok(out)
}

/// Shared contract of the frame-to-compliance models. Inputs are
/// `[n, 1, H, W]` batches with pixels in `[0, 1]`; outputs are `[n, 1]`
/// normalized labels.
pub trait FrameRegressor {
    fn kind(&self) -> &'static str;
    fn frame_shape(&self) -> (usize, usize);
    /// Training-mode forward pass that caches activations for `backward`.
    fn forward(&mut self, x: &Tensor) -> Result<Tensor>;
    /// Parameter gradients of every network, in [`FrameRegressor::networks`] order.
    fn backward(&mut self, dy: &Tensor) -> Result<Vec<Gradients>>;
    fn infer(&self, x: &Tensor) -> Result<Tensor>;
    fn networks(&self) -> Vec<(String, &Network)>;
    fn network_mut(&mut self, index: usize) -> &mut Network;
    fn save(&self, dir: &Path) -> Result<()>;
}

fn check_frames(x: &Tensor, (h, w): (usize, usize)) -> Result<()> {
    match *x.shape() {
        [_, 1, xh, xw] if (xh, xw) == (h, w) => Ok(()),
        _ => Err(Error::Config(format!(
            "model expects [n, 1, {h}, {w}] frames, got {:?}",
            x.shape()
        ))),
    }
}

pub struct CicModel {
    config: CicConfig,
    subnets: Vec<Network>,
    fusion: Network,
}

impl CicModel {
    pub fn new(config: &CicConfig, init: &InitConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let sub_specs = config.subnet_specs();
        let mut subnets = Vec::with_capacity(config.tiles());
        for _ in 0..config.tiles() {
            let mut net = Network::new(&[1, config.sub_height, config.sub_width], &sub_specs, init, rng)?;
            if net.output_shape() != [1, 1, 1] {
                return Err(Error::Config(format!(
                    "tile network must end in a 1x1x1 output, got {:?}",
                    net.output_shape()
                )));
            }
            net.set_input_gradient(false);
            subnets.push(net);
        }
        let fusion = Network::new(&[1, config.grid_rows, config.grid_cols], &config.fusion_specs(), init, rng)?;
        Ok(CicModel {
            config: config.clone(),
            subnets,
            fusion,
        })
    }

    pub fn config(&self) -> &CicConfig {
        &self.config
    }

    pub fn subnet(&self, tile: usize) -> &Network {
        &self.subnets[tile]
    }

    pub fn subnet_mut(&mut self, tile: usize) -> &mut Network {
        &mut self.subnets[tile]
    }

    pub fn fusion(&self) -> &Network {
        &self.fusion
    }

    pub fn fusion_mut(&mut self) -> &mut Network {
        &mut self.fusion
    }

    fn grid_from(&self, outputs: &[Tensor], n: usize) -> Result<Tensor> {
        let k = self.config.tiles();
        let mut grid = vec![0.0; n * k];
        for (t, out) in outputs.iter().enumerate() {
            for b in 0..n {
                grid[b * k + t] = out.data()[b];
            }
        }
        Tensor::new(&[n, 1, self.config.grid_rows, self.config.grid_cols], grid)
    }

    /// Tile-network outputs arranged as the `[n, 1, rows, cols]` grid the
    /// fusion head consumes (evaluation mode).
    pub fn grid_values(&self, x: &Tensor) -> Result<Tensor> {
        check_frames(x, self.frame_shape())?;
        let tiles = partition_batch(x, self.config.grid_rows, self.config.grid_cols)?;
        let outs = tiles
            .iter()
            .zip(&self.subnets)
            .map(|(t, net)| net.infer(t))
            .collect::<Result<Vec<_>>>()?;
        self.grid_from(&outs, x.batch())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = checkpoint::read_bundle_index(dir)?;
        let config = CicConfig::from_meta(&index)?;
        let mut model = CicModel::new(&config, &InitConfig::default(), &mut crate::rng::seeded(0))?;
        let names: Vec<String> = model.networks().into_iter().map(|(n, _)| n).collect();
        let mut nets: Vec<(String, &mut Network)> = names
            .into_iter()
            .zip(model.subnets.iter_mut().chain(std::iter::once(&mut model.fusion)))
            .collect();
        checkpoint::load_bundle(dir, "cic", &mut nets)?;
        Ok(model)
    }
}

impl FrameRegressor for CicModel {
    fn kind(&self) -> &'static str {
        "cic"
    }

    fn frame_shape(&self) -> (usize, usize) {
        self.config.frame_shape()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_frames(x, self.frame_shape())?;
        let tiles = partition_batch(x, self.config.grid_rows, self.config.grid_cols)?;
        let outs = tiles
            .iter()
            .zip(self.subnets.iter_mut())
            .map(|(t, net)| net.forward(t))
            .collect::<Result<Vec<_>>>()?;
        let grid = self.grid_from(&outs, x.batch())?;
        self.fusion.forward(&grid)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Vec<Gradients>> {
        let mut fusion_grads = self.fusion.backward(dy)?;
        let dgrid = fusion_grads
            .input
            .take()
            .ok_or_else(|| Error::State("fusion head did not return an input gradient".into()))?;
        let n = dgrid.batch();
        let k = self.config.tiles();
        let mut grads = Vec::with_capacity(k + 1);
        for (t, net) in self.subnets.iter_mut().enumerate() {
            let d = Tensor::from_fn(&[n, 1, 1, 1], |b| dgrid.data()[b * k + t]);
            grads.push(net.backward(&d)?);
        }
        grads.push(fusion_grads);
        Ok(grads)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let grid = self.grid_values(x)?;
        self.fusion.infer(&grid)
    }

    fn networks(&self) -> Vec<(String, &Network)> {
        let cols = self.config.grid_cols;
        self.subnets
            .iter()
            .enumerate()
            .map(|(t, n)| (format!("tile_r{}_c{}", t / cols, t % cols), n))
            .chain(std::iter::once(("fusion".to_string(), &self.fusion)))
            .collect()
    }

    fn network_mut(&mut self, index: usize) -> &mut Network {
        if index < self.subnets.len() {
            &mut self.subnets[index]
        } else {
            &mut self.fusion
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_bundle(dir, "cic", &self.config.meta(), &self.networks())
    }
}

/// Single whole-frame CNN with the same interface as [`CicModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub hidden: usize,
}

impl BaselineConfig {
    pub fn desk(frame_height: usize, frame_width: usize) -> Self {
        BaselineConfig {
            frame_height,
            frame_width,
            channels: [8, 8],
            kernel: 5,
            hidden: 32,
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(self.channels[0], self.kernel, 1, Padding::Same),
            LayerSpec::relu(),
            LayerSpec::max_pool((2, 2), (2, 2)),
            LayerSpec::conv(self.channels[1], self.kernel, 1, Padding::Same),
            LayerSpec::relu(),
            LayerSpec::max_pool((2, 2), (2, 2)),
            LayerSpec::dense(self.hidden),
            LayerSpec::relu(),
            LayerSpec::dense(1),
        ]
    }
}

pub struct BaselineCnn {
    config: BaselineConfig,
    net: Network,
}

impl BaselineCnn {
    pub fn new(config: &BaselineConfig, init: &InitConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.frame_height < 4 || config.frame_width < 4 {
            return Err(Error::Config("baseline frames must be at least 4x4".into()));
        }
        let mut net = Network::new(&[1, config.frame_height, config.frame_width], &config.specs(), init, rng)?;
        net.set_input_gradient(false);
        Ok(BaselineCnn {
            config: config.clone(),
            net,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = checkpoint::read_bundle_index(dir)?;
        let config = BaselineConfig {
            frame_height: index.parse("frame_height")?,
            frame_width: index.parse("frame_width")?,
            channels: [index.parse("channels_1")?, index.parse("channels_2")?],
            kernel: index.parse("kernel")?,
            hidden: index.parse("hidden")?,
        };
        let mut model = BaselineCnn::new(&config, &InitConfig::default(), &mut crate::rng::seeded(0))?;
        checkpoint::load_bundle(dir, "baseline", &mut [("net".to_string(), &mut model.net)])?;
        Ok(model)
    }
}

impl FrameRegressor for BaselineCnn {
    fn kind(&self) -> &'static str {
        "baseline"
    }

    fn frame_shape(&self) -> (usize, usize) {
        (self.config.frame_height, self.config.frame_width)
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_frames(x, self.frame_shape())?;
        self.net.forward(x)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Vec<Gradients>> {
        Ok(vec![self.net.backward(dy)?])
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        check_frames(x, self.frame_shape())?;
        self.net.infer(x)
    }

    fn networks(&self) -> Vec<(String, &Network)> {
        vec![("net".to_string(), &self.net)]
    }

    fn network_mut(&mut self, _index: usize) -> &mut Network {
        &mut self.net
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let c = &self.config;
        let meta = [
            ("frame_height", c.frame_height),
            ("frame_width", c.frame_width),
            ("channels_1", c.channels[0]),
            ("channels_2", c.channels[1]),
            ("kernel", c.kernel),
            ("hidden", c.hidden),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect::<Vec<_>>();
        checkpoint::save_bundle(dir, "baseline", &meta, &self.networks())
    }
}

/// Load whichever regressor kind a checkpoint directory holds.
pub fn load_regressor(dir: &Path) -> Result<Box<dyn FrameRegressor>> {
    match checkpoint::read_bundle_index(dir)?.kind.as_str() {
        "cic" => Ok(Box::new(CicModel::load(dir)?)),
        "baseline" => Ok(Box::new(BaselineCnn::load(dir)?)),
        other => Err(Error::Data(format!("{}: {other} is not a regressor", dir.display()))),
    }
}

/// Training hyperparameters: initial learning rate, decay factor applied
/// once per `decay_period` steps (continuously interpolated), batch size,
/// L2 weight, and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub alpha0: f64,
    pub decay: f64,
    pub decay_period: usize,
    pub l2: f64,
    pub histogram_every: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch: 50,
            alpha0: 0.01,
            decay: 0.99,
            decay_period: 50,
            l2: 1e-4,
            histogram_every: 50,
            optimizer: OptimizerConfig::adam(0.01),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.decay_period == 0 {
            return Err(Error::Config("batch size and decay period must be positive".into()));
        }
        if !(self.alpha0 > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config(format!(
                "invalid schedule: alpha0={}, decay={}, l2={}",
                self.alpha0, self.decay, self.l2
            )));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mse: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRecord {
    pub step: usize,
    pub layer: String,
    pub param_kind: ParamKind,
    pub histogram: Histogram,
}

pub trait TelemetrySink {
    fn record_loss(&mut self, record: &LossRecord) -> Result<()>;
    fn record_histograms(&mut self, records: &[HistogramRecord]) -> Result<()>;
}

/// Discards everything.
pub struct NullTelemetry;

impl TelemetrySink for NullTelemetry {
    fn record_loss(&mut self, _: &LossRecord) -> Result<()> {
        Ok(())
    }
    fn record_histograms(&mut self, _: &[HistogramRecord]) -> Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemoryTelemetry {
    pub losses: Vec<LossRecord>,
    pub histograms: Vec<HistogramRecord>,
}

impl TelemetrySink for MemoryTelemetry {
    fn record_loss(&mut self, record: &LossRecord) -> Result<()> {
        self.losses.push(*record);
        Ok(())
    }
    fn record_histograms(&mut self, records: &[HistogramRecord]) -> Result<()> {
        self.histograms.extend_from_slice(records);
        Ok(())
    }
}

/// Streams `step,lr,loss,mse,l2` and
/// `step,layer,param_kind,bin_lo,bin_hi,count` CSV files.
pub struct CsvTelemetry {
    loss: BufWriter<File>,
    loss_path: std::path::PathBuf,
    hist: BufWriter<File>,
    hist_path: std::path::PathBuf,
}

impl CsvTelemetry {
    pub fn create(loss_path: &Path, hist_path: &Path) -> Result<Self> {
        let mut loss = BufWriter::new(File::create(loss_path).at(loss_path)?);
        writeln!(loss, "step,lr,loss,mse,l2").at(loss_path)?;
        let mut hist = BufWriter::new(File::create(hist_path).at(hist_path)?);
        writeln!(hist, "step,layer,param_kind,bin_lo,bin_hi,count").at(hist_path)?;
        Ok(CsvTelemetry {
            loss,
            loss_path: loss_path.to_path_buf(),
            hist,
            hist_path: hist_path.to_path_buf(),
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.loss.flush().at(&self.loss_path)?;
        self.hist.flush().at(&self.hist_path)
    }
}

impl TelemetrySink for CsvTelemetry {
    fn record_loss(&mut self, r: &LossRecord) -> Result<()> {
        writeln!(self.loss, "{},{:?},{:?},{:?},{:?}", r.step, r.lr, r.loss, r.mse, r.l2).at(&self.loss_path)
    }

    fn record_histograms(&mut self, records: &[HistogramRecord]) -> Result<()> {
        for r in records {
            let h = &r.histogram;
            for (i, count) in h.counts.iter().enumerate() {
                writeln!(
                    self.hist,
                    "{},{},{},{:?},{:?},{}",
                    r.step,
                    r.layer,
                    r.param_kind.label(),
                    h.edges[i],
                    h.edges[i + 1],
                    count
                )
                .at(&self.hist_path)?;
            }
        }
        Ok(())
    }
}

/// 64-bin histograms of the weights and of the biases of every layer.
pub fn weight_histograms(model: &dyn FrameRegressor, step: usize) -> Result<Vec<HistogramRecord>> {
    let mut out = Vec::new();
    for (net_name, net) in model.networks() {
        for (layer, range) in net.layer_params() {
            for kind in [ParamKind::Weight, ParamKind::Bias] {
                let values: Vec<f64> = range
                    .clone()
                    .map(|i| net.store().get(i))
                    .filter(|p| p.kind == kind)
                    .flat_map(|p| p.value.data().iter().copied())
                    .collect();
                if values.is_empty() {
                    continue;
                }
                out.push(HistogramRecord {
                    step,
                    layer: format!("{net_name}/{layer}"),
                    param_kind: kind,
                    histogram: histogram(&values, HISTOGRAM_BINS)?,
                });
            }
        }
    }
    Ok(out)
}

/// Mini-batch training: each step samples `batch` frames with replacement,
/// minimizes MSE on normalized labels plus the L2 weight penalty, and
/// applies the optimizer to every network at the decayed learning rate.
pub fn train(
    model: &mut dyn FrameRegressor,
    data: &FrameDataset,
    config: &TrainConfig,
    rng: &mut impl Rng,
    sink: &mut dyn TelemetrySink,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    let labels = data.labels_norm()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if config.batch > data.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training frames",
            config.batch,
            data.len()
        )));
    }
    if data.frame_shape() != Some(model.frame_shape()) {
        return Err(Error::Config(format!(
            "model expects {:?} frames, dataset holds {:?}",
            model.frame_shape(),
            data.frame_shape()
        )));
    }
    let images: Vec<Tensor> = data.frames.iter().map(|f| f.image.to_tensor()).collect();
    let mut history = Vec::with_capacity(config.steps);
    let mut last_finite = f64::NAN;
    for step in 0..config.steps {
        if config.histogram_every > 0 && step % config.histogram_every == 0 {
            sink.record_histograms(&weight_histograms(model, step)?)?;
        }
        let lr = optim::decayed_lr(config.alpha0, config.decay, step as u64, config.decay_period as u64);
        let idx: Vec<usize> = (0..config.batch).map(|_| rng.random_range(0..data.len())).collect();
        let x = Tensor::stack(&idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
        let y = model.forward(&x)?;
        let m = config.batch as f64;
        let mut mse = 0.0;
        let mut dy = Tensor::zeros(&[config.batch, 1]);
        for (b, &i) in idx.iter().enumerate() {
            let diff = y.data()[b] - labels[i];
            mse += diff * diff / m;
            dy.data_mut()[b] = 2.0 * diff / m;
        }
        let l2: f64 = model
            .networks()
            .iter()
            .map(|(_, n)| optim::l2_penalty(n.store(), config.l2))
            .sum();
        let loss = mse + l2;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {step} (last finite loss {last_finite})"
            )));
        }
        last_finite = loss;
        let mut grads = model.backward(&dy)?;
        let opt = OptimizerConfig {
            learning_rate: lr,
            ..config.optimizer
        };
        for (k, g) in grads.iter_mut().enumerate() {
            let net = model.network_mut(k);
            optim::add_l2_gradient(net.store(), g, config.l2);
            opt.step(net.store_mut(), g, step as u64 + 1)?;
        }
        let rec = LossRecord { step, lr, loss, mse, l2 };
        sink.record_loss(&rec)?;
        history.push(rec);
    }
    if config.histogram_every > 0 && config.steps > 0 && config.steps % config.histogram_every == 0 {
        sink.record_histograms(&weight_histograms(model, config.steps)?)?;
    }
    Ok(history)
}

/// Normalized model outputs for a list of frames, evaluated in chunks.
pub fn forward_frames(model: &dyn FrameRegressor, frames: &[GrayImage]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(64) {
        let x = Tensor::stack(&chunk.iter().map(GrayImage::to_tensor).collect::<Vec<_>>())?;
        out.extend_from_slice(model.infer(&x)?.data());
    }
    Ok(out)
}

/// Compliance in physical units: the model output mapped back through the
/// label normalization.
pub fn predict(model: &dyn FrameRegressor, frames: &[GrayImage], norm: &NormSpec) -> Result<Vec<f64>> {
    Ok(forward_frames(model, frames)?
        .into_iter()
        .map(|v| norm.invert(v))
        .collect())
}

/// Finite-difference check of every parameter of every network against
/// `backward`, on the scalar `sum(w * model(x))` with random `w`.
pub fn check_regressor(model: &mut dyn FrameRegressor, x: &Tensor, h: f64, rng: &mut impl Rng) -> Result<GradCheckReport> {
    let y = model.forward(x)?;
    let w = Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
    let grads = model.backward(&w)?;
    let loss = |model: &mut dyn FrameRegressor| -> Result<f64> {
        let y = model.forward(x)?;
        Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };
    let mut report = GradCheckReport::default();
    for (k, g) in grads.iter().enumerate() {
        for p in 0..g.params.len() {
            for i in 0..g.params[p].len() {
                let orig = model.network_mut(k).store().get(p).value.data()[i];
                model.network_mut(k).store_mut().get_mut(p).value.data_mut()[i] = orig + h;
                let plus = loss(model)?;
                model.network_mut(k).store_mut().get_mut(p).value.data_mut()[i] = orig - h;
                let minus = loss(model)?;
                model.network_mut(k).store_mut().get_mut(p).value.data_mut()[i] = orig;
                let err = relative_error(g.params[p].data()[i], (plus - minus) / (2.0 * h));
                report.max_param_error = report.max_param_error.max(err);
                report.compared += 1;
            }
        }
    }
    Ok(report)
}
