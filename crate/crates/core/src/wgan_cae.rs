//! Convolutional autoencoder that compresses frames to a small latent
//! image, and a weight-clipped Wasserstein GAN trained on those latents.
//! New frames are produced by decoding generator samples.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::FrameDataset;
use crate::error::{Error, IoContext, Result};
use crate::nn::checkpoint::{self, BundleIndex};
use crate::nn::gradcheck::{relative_error, GradCheckReport};
use crate::nn::{Gradients, InitConfig, LayerSpec, Network, Padding};
use crate::optim::OptimizerConfig;
use crate::pgm::{self, GrayImage};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

fn meta(pairs: &[(&str, usize)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaeConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    /// Channels of the three stride-2 convolutions.
    pub conv_channels: [usize; 3],
    /// Widths of the three hidden dense layers, outermost first.
    pub dense: [usize; 3],
    pub latent_height: usize,
    pub latent_width: usize,
}

impl CaeConfig {
    pub fn desk(frame_height: usize, frame_width: usize) -> Self {
        CaeConfig {
            frame_height,
            frame_width,
            conv_channels: [8, 16, 16],
            dense: [128, 128, 64],
            latent_height: 8,
            latent_width: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_height < 8 || self.frame_width < 8 {
            return Err(Error::Config(format!(
                "autoencoder frames must be at least 8x8, got {}x{}",
                self.frame_height, self.frame_width
            )));
        }
        if self.conv_channels.contains(&0) || self.dense.contains(&0) || self.latent_height == 0 || self.latent_width == 0 {
            return Err(Error::Config("autoencoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial sizes after each stride-2 convolution.
    fn stages(&self) -> [(usize, usize); 3] {
        let s1 = (half(self.frame_height), half(self.frame_width));
        let s2 = (half(s1.0), half(s1.1));
        let s3 = (half(s2.0), half(s2.1));
        [s1, s2, s3]
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for &c in &self.conv_channels {
            specs.push(LayerSpec::conv(c, 3, 2, Padding::Same));
            specs.push(LayerSpec::lrelu(LEAKY_SLOPE));
        }
        for &d in &self.dense {
            specs.push(LayerSpec::dense(d));
            specs.push(LayerSpec::lrelu(LEAKY_SLOPE));
        }
        specs.push(LayerSpec::dense(self.latent_height * self.latent_width));
        specs.push(LayerSpec::reshape(&[1, self.latent_height, self.latent_width]));
        specs
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let [s1, s2, s3] = self.stages();
        let [c1, c2, c3] = self.conv_channels;
        let mut specs = Vec::new();
        for &d in self.dense.iter().rev() {
            specs.push(LayerSpec::dense(d));
            specs.push(LayerSpec::lrelu(LEAKY_SLOPE));
        }
        specs.push(LayerSpec::dense(c3 * s3.0 * s3.1));
        specs.push(LayerSpec::lrelu(LEAKY_SLOPE));
        specs.push(LayerSpec::reshape(&[c3, s3.0, s3.1]));
        specs.push(LayerSpec::deconv(c2, 3, 2, Some(s2)));
        specs.push(LayerSpec::lrelu(LEAKY_SLOPE));
        specs.push(LayerSpec::deconv(c1, 3, 2, Some(s1)));
        specs.push(LayerSpec::lrelu(LEAKY_SLOPE));
        specs.push(LayerSpec::deconv(1, 3, 2, Some((self.frame_height, self.frame_width))));
        specs
    }
}

pub struct CaeModel {
    config: CaeConfig,
    encoder: Network,
    decoder: Network,
}

impl CaeModel {
    pub fn new(config: &CaeConfig, init: &InitConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut encoder = Network::new(&[1, config.frame_height, config.frame_width], &config.encoder_specs(), init, rng)?;
        encoder.set_input_gradient(false);
        let decoder = Network::new(
            &[1, config.latent_height, config.latent_width],
            &config.decoder_specs(),
            init,
            rng,
        )?;
        Ok(CaeModel {
            config: config.clone(),
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.config.latent_height, self.config.latent_width)
    }

    fn check_frames(&self, x: &Tensor) -> Result<()> {
        match *x.shape() {
            [_, 1, h, w] if (h, w) == (self.config.frame_height, self.config.frame_width) => Ok(()),
            _ => Err(Error::Config(format!(
                "autoencoder expects [n, 1, {}, {}] frames, got {:?}",
                self.config.frame_height,
                self.config.frame_width,
                x.shape()
            ))),
        }
    }

    /// Latent codes `[n, 1, latent_h, latent_w]`.
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        self.check_frames(frames)?;
        self.encoder.infer(frames)
    }

    /// Frames with pixels clamped to `[0, 1]`.
    pub fn decode(&self, codes: &Tensor) -> Result<Tensor> {
        match *codes.shape() {
            [_, 1, h, w] if (h, w) == self.latent_shape() => {}
            _ => {
                return Err(Error::Config(format!(
                    "decoder expects [n, 1, {}, {}] codes, got {:?}",
                    self.config.latent_height,
                    self.config.latent_width,
                    codes.shape()
                )))
            }
        }
        Ok(self.decoder.infer(codes)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Unclamped decoder output of the encoded input.
    pub fn reconstruct_raw(&self, frames: &Tensor) -> Result<Tensor> {
        self.decoder.infer(&self.encode(frames)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let c = &self.config;
        let m = meta(&[
            ("frame_height", c.frame_height),
            ("frame_width", c.frame_width),
            ("conv_1", c.conv_channels[0]),
            ("conv_2", c.conv_channels[1]),
            ("conv_3", c.conv_channels[2]),
            ("dense_1", c.dense[0]),
            ("dense_2", c.dense[1]),
            ("dense_3", c.dense[2]),
            ("latent_height", c.latent_height),
            ("latent_width", c.latent_width),
        ]);
        checkpoint::save_bundle(
            dir,
            "cae",
            &m,
            &[("encoder".into(), &self.encoder), ("decoder".into(), &self.decoder)],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = checkpoint::read_bundle_index(dir)?;
        let config = CaeConfig {
            frame_height: index.parse("frame_height")?,
            frame_width: index.parse("frame_width")?,
            conv_channels: [index.parse("conv_1")?, index.parse("conv_2")?, index.parse("conv_3")?],
            dense: [index.parse("dense_1")?, index.parse("dense_2")?, index.parse("dense_3")?],
            latent_height: index.parse("latent_height")?,
            latent_width: index.parse("latent_width")?,
        };
        let mut model = CaeModel::new(&config, &InitConfig::default(), &mut crate::rng::seeded(0))?;
        checkpoint::load_bundle(
            dir,
            "cae",
            &mut [("encoder".into(), &mut model.encoder), ("decoder".into(), &mut model.decoder)],
        )?;
        Ok(model)
    }
}

/// Mean squared difference over all samples and pixels.
pub fn reconstruction_mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Data(format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for CaeTrainConfig {
    fn default() -> Self {
        CaeTrainConfig {
            epochs: 100,
            batch: 8,
            optimizer: OptimizerConfig::adam(1e-3),
        }
    }
}

/// Minimize per-pixel MSE between frames and their reconstructions with
/// shuffled mini-batches. Returns the mean training MSE of each epoch.
pub fn train_cae(cae: &mut CaeModel, data: &FrameDataset, config: &CaeTrainConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    config.optimizer.validate()?;
    if config.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("autoencoder training set is empty".into()));
    }
    let images: Vec<Tensor> = data.frames.iter().map(|f| f.image.to_tensor()).collect();
    cae.check_frames(&Tensor::stack(&images[..1])?)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let x = Tensor::stack(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
            let code = cae.encoder.forward(&x)?;
            let y = cae.decoder.forward(&code)?;
            let count = y.len() as f64;
            let mut dy = Tensor::zeros(y.shape());
            let mut mse = 0.0;
            for ((d, a), b) in dy.data_mut().iter_mut().zip(y.data()).zip(x.data()) {
                mse += (a - b) * (a - b) / count;
                *d = 2.0 * (a - b) / count;
            }
            if !mse.is_finite() {
                return Err(Error::Numerical(format!("non-finite autoencoder loss in epoch {epoch}")));
            }
            total += mse * chunk.len() as f64;
            let mut dec_grads = cae.decoder.backward(&dy)?;
            let dcode = dec_grads.input.take().expect("decoder input gradient");
            let enc_grads = cae.encoder.backward(&dcode)?;
            step += 1;
            config.optimizer.step(cae.decoder.store_mut(), &dec_grads, step)?;
            config.optimizer.step(cae.encoder.store_mut(), &enc_grads, step)?;
        }
        history.push(total / images.len() as f64);
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WganConfig {
    pub z_dim: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    /// Generator channels before the two deconvolutions.
    pub generator_channels: [usize; 2],
    /// Critic convolution channels.
    pub critic_channels: [usize; 2],
    pub clip: f64,
    pub n_critic: usize,
}

impl Default for WganConfig {
    fn default() -> Self {
        WganConfig {
            z_dim: 64,
            latent_height: 8,
            latent_width: 8,
            generator_channels: [32, 16],
            critic_channels: [16, 32],
            clip: 0.01,
            n_critic: 5,
        }
    }
}

impl WganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.latent_height < 2 || self.latent_width < 2 {
            return Err(Error::Config("noise dimension must be positive and latents at least 2x2".into()));
        }
        if !(self.clip > 0.0) || self.n_critic == 0 {
            return Err(Error::Config(format!(
                "clip bound must be positive and n_critic at least 1 (clip={}, n_critic={})",
                self.clip, self.n_critic
            )));
        }
        if self.generator_channels.contains(&0) || self.critic_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Dense projection, batch norm and two stride-2 deconvolutions up to
    /// the latent size; linear output.
    pub fn generator_specs(&self) -> Vec<LayerSpec> {
        let mid = (half(self.latent_height), half(self.latent_width));
        let base = (half(mid.0), half(mid.1));
        let [c0, c1] = self.generator_channels;
        vec![
            LayerSpec::dense(c0 * base.0 * base.1),
            LayerSpec::reshape(&[c0, base.0, base.1]),
            LayerSpec::BatchNorm,
            LayerSpec::relu(),
            LayerSpec::deconv(c1, 3, 2, Some(mid)),
            LayerSpec::relu(),
            LayerSpec::deconv(1, 3, 2, Some((self.latent_height, self.latent_width))),
        ]
    }

    /// Two stride-2 convolutions and a dense score. No batch norm: real and
    /// fake batches pass through separately, and per-batch normalization
    /// would erase the very offset between them the critic has to see.
    pub fn critic_specs(&self) -> Vec<LayerSpec> {
        let [c0, c1] = self.critic_channels;
        vec![
            LayerSpec::conv(c0, 3, 2, Padding::Same),
            LayerSpec::lrelu(LEAKY_SLOPE),
            LayerSpec::conv(c1, 3, 2, Padding::Same),
            LayerSpec::lrelu(LEAKY_SLOPE),
            LayerSpec::dense(1),
        ]
    }

    fn meta(&self) -> Vec<(String, String)> {
        let mut m = meta(&[
            ("z_dim", self.z_dim),
            ("latent_height", self.latent_height),
            ("latent_width", self.latent_width),
            ("generator_1", self.generator_channels[0]),
            ("generator_2", self.generator_channels[1]),
            ("critic_1", self.critic_channels[0]),
            ("critic_2", self.critic_channels[1]),
            ("n_critic", self.n_critic),
        ]);
        m.push(("clip".into(), format!("{:?}", self.clip)));
        m
    }

    fn from_meta(index: &BundleIndex) -> Result<Self> {
        Ok(WganConfig {
            z_dim: index.parse("z_dim")?,
            latent_height: index.parse("latent_height")?,
            latent_width: index.parse("latent_width")?,
            generator_channels: [index.parse("generator_1")?, index.parse("generator_2")?],
            critic_channels: [index.parse("critic_1")?, index.parse("critic_2")?],
            clip: index.parse("clip")?,
            n_critic: index.parse("n_critic")?,
        })
    }
}

pub struct WganModel {
    config: WganConfig,
    generator: Network,
    critic: Network,
}

impl WganModel {
    /// The critic starts inside the clip box.
    pub fn new(config: &WganConfig, init: &InitConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut generator = Network::new(&[config.z_dim], &config.generator_specs(), init, rng)?;
        generator.set_input_gradient(false);
        let mut critic = Network::new(
            &[1, config.latent_height, config.latent_width],
            &config.critic_specs(),
            init,
            rng,
        )?;
        critic.store_mut().clip(config.clip);
        Ok(WganModel {
            config: config.clone(),
            generator,
            critic,
        })
    }

    pub fn config(&self) -> &WganConfig {
        &self.config
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Network {
        &mut self.generator
    }

    pub fn critic(&self) -> &Network {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Network {
        &mut self.critic
    }

    pub fn sample_noise(&self, count: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(&[count, self.config.z_dim], |_| StandardNormal.sample(rng))
    }

    /// Evaluation-mode generator output for noise `[n, z_dim]`.
    pub fn generate_latents(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.infer(z)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_bundle(
            dir,
            "wgan",
            &self.config.meta(),
            &[("generator".into(), &self.generator), ("critic".into(), &self.critic)],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = checkpoint::read_bundle_index(dir)?;
        let config = WganConfig::from_meta(&index)?;
        let mut model = WganModel::new(&config, &InitConfig::default(), &mut crate::rng::seeded(0))?;
        checkpoint::load_bundle(
            dir,
            "wgan",
            &mut [("generator".into(), &mut model.generator), ("critic".into(), &mut model.critic)],
        )?;
        Ok(model)
    }
}

/// `mean(real) - mean(fake)` from critic scores.
pub fn critic_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    check_scores(real_scores, fake_scores)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(real_scores) - mean(fake_scores))
}

/// `|sum(real) - sum(fake)| / m` from critic scores.
pub fn g_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    check_scores(real_scores, fake_scores)?;
    let m = real_scores.len() as f64;
    Ok((real_scores.iter().sum::<f64>() - fake_scores.iter().sum::<f64>()).abs() / m)
}

fn check_scores(real: &[f64], fake: &[f64]) -> Result<()> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::Data(format!(
            "critic batches must be non-empty and equal in size ({} vs {})",
            real.len(),
            fake.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WganTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for WganTrainConfig {
    fn default() -> Self {
        WganTrainConfig {
            steps: 2000,
            batch: 32,
            optimizer: OptimizerConfig::rmsprop(5e-4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WganRecord {
    pub step: usize,
    pub g_loss: f64,
    pub critic_loss: f64,
}

fn scores(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

/// Per outer step: `n_critic` critic updates, each followed by clipping
/// every critic parameter into `[-clip, clip]`, then one generator update.
/// Real batches are drawn with replacement from `latents` (`[N, 1, h, w]`).
/// `after_critic` observes the critic after every clipped update.
pub fn train_wgan_observed(
    wgan: &mut WganModel,
    latents: &Tensor,
    config: &WganTrainConfig,
    rng: &mut impl Rng,
    mut after_critic: impl FnMut(&Network),
) -> Result<Vec<WganRecord>> {
    config.optimizer.validate()?;
    let expect = [1, wgan.config.latent_height, wgan.config.latent_width];
    if latents.shape().len() != 4 || latents.shape()[1..] != expect || latents.batch() == 0 {
        return Err(Error::Config(format!(
            "latent dataset must be [n, {:?}], got {:?}",
            expect,
            latents.shape()
        )));
    }
    if config.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let codes = latents.unstack();
    let m = config.batch;
    let mut history = Vec::with_capacity(config.steps);
    let mut critic_step = 0u64;
    let mut gen_step = 0u64;
    for step in 0..config.steps {
        let mut last = (0.0, 0.0);
        for _ in 0..wgan.config.n_critic {
            let real = Tensor::stack(
                &(0..m)
                    .map(|_| codes[rng.random_range(0..codes.len())].clone())
                    .collect::<Vec<_>>(),
            )?;
            let z = wgan.sample_noise(m, rng);
            let fake = wgan.generator.forward(&z)?;
            let real_scores = wgan.critic.forward(&real)?;
            let mut grads = wgan.critic.backward(&Tensor::full(real_scores.shape(), -1.0 / m as f64))?;
            let fake_scores = wgan.critic.forward(&fake)?;
            grads.accumulate(&wgan.critic.backward(&Tensor::full(fake_scores.shape(), 1.0 / m as f64))?);
            let (r, f) = (scores(&real_scores), scores(&fake_scores));
            if r.iter().chain(&f).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite critic score at step {step}")));
            }
            last = (g_loss(&r, &f)?, critic_loss(&r, &f)?);
            critic_step += 1;
            config.optimizer.step(wgan.critic.store_mut(), &grads, critic_step)?;
            wgan.critic.store_mut().clip(wgan.config.clip);
            after_critic(&wgan.critic);
        }
        let z = wgan.sample_noise(m, rng);
        let fake = wgan.generator.forward(&z)?;
        let fake_scores = wgan.critic.forward(&fake)?;
        let critic_grads = wgan.critic.backward(&Tensor::full(fake_scores.shape(), -1.0 / m as f64))?;
        let dfake = critic_grads
            .input
            .ok_or_else(|| Error::State("critic did not return an input gradient".into()))?;
        let g_grads = wgan.generator.backward(&dfake)?;
        gen_step += 1;
        config.optimizer.step(wgan.generator.store_mut(), &g_grads, gen_step)?;
        history.push(WganRecord {
            step,
            g_loss: last.0,
            critic_loss: last.1,
        });
    }
    Ok(history)
}

pub fn train_wgan(wgan: &mut WganModel, latents: &Tensor, config: &WganTrainConfig, rng: &mut impl Rng) -> Result<Vec<WganRecord>> {
    train_wgan_observed(wgan, latents, config, rng, |_| {})
}

/// Decode `count` generator samples drawn from a Gaussian seeded by `seed`.
/// Each frame is `[1, H, W]` with pixels in `[0, 1]`.
pub fn generate(wgan: &WganModel, cae: &CaeModel, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    if (wgan.config.latent_height, wgan.config.latent_width) != cae.latent_shape() {
        return Err(Error::Config(format!(
            "generator latents are {}x{} but the decoder expects {:?}",
            wgan.config.latent_height,
            wgan.config.latent_width,
            cae.latent_shape()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = crate::rng::seeded(seed);
    let z = wgan.sample_noise(count, &mut rng);
    let frames = cae.decode(&wgan.generate_latents(&z)?)?;
    Ok(frames.unstack())
}

/// Finite-difference check of the generator parameters through a frozen
/// critic, on `sum(w * critic(generator(z)))`. Both networks run in
/// training mode (batch statistics).
pub fn check_generator(wgan: &mut WganModel, z: &Tensor, h: f64, rng: &mut impl Rng) -> Result<GradCheckReport> {
    let out = wgan.critic.forward(&wgan.generator.forward(z)?)?;
    let w = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let dfake = wgan
        .critic
        .backward(&w)?
        .input
        .ok_or_else(|| Error::State("critic did not return an input gradient".into()))?;
    let grads: Gradients = wgan.generator.backward(&dfake)?;
    let mut report = GradCheckReport::default();
    for p in 0..grads.params.len() {
        for i in 0..grads.params[p].len() {
            let orig = wgan.generator.store().get(p).value.data()[i];
            let eval = |v: f64, wgan: &mut WganModel| -> Result<f64> {
                wgan.generator.store_mut().get_mut(p).value.data_mut()[i] = v;
                let y = wgan.critic.forward(&wgan.generator.forward(z)?)?;
                Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
            };
            let plus = eval(orig + h, wgan)?;
            let minus = eval(orig - h, wgan)?;
            wgan.generator.store_mut().get_mut(p).value.data_mut()[i] = orig;
            report.max_param_error = report
                .max_param_error
                .max(relative_error(grads.params[p].data()[i], (plus - minus) / (2.0 * h)));
            report.compared += 1;
        }
    }
    Ok(report)
}

pub const GENERATED_MANIFEST: &str = "manifest.csv";

/// A decoded generator sample on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFrame {
    pub gen_index: usize,
    pub image_path: PathBuf,
    pub seed: u64,
}

/// Write `gen_NNNNN.pgm` files and a `gen_index,image_path,seed` manifest.
pub fn save_generated(frames: &[Tensor], dir: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let manifest = dir.join(GENERATED_MANIFEST);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
    w.write_record(["gen_index", "image_path", "seed"]).map_err(|e| csv_error(&manifest, e))?;
    for (i, t) in frames.iter().enumerate() {
        let name = format!("gen_{i:05}.pgm");
        pgm::write_pgm(&GrayImage::from_unit_tensor(t)?, &dir.join(&name))?;
        w.write_record([i.to_string(), name, seed.to_string()])
            .map_err(|e| csv_error(&manifest, e))?;
    }
    w.flush().at(&manifest)?;
    Ok(manifest)
}

/// Entries of a generated-frame manifest, paths resolved against its directory.
pub fn read_generated(manifest: &Path) -> Result<Vec<GeneratedFrame>> {
    let mut r = csv::Reader::from_path(manifest).map_err(|e| csv_error(manifest, e))?;
    let header = r.headers().map_err(|e| csv_error(manifest, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["gen_index", "image_path", "seed"] {
        return Err(Error::Data(format!("{}: unexpected header {:?}", manifest.display(), header)));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| csv_error(manifest, e))?;
            let bad = || Error::Data(format!("{}: malformed row {}", manifest.display(), i + 2));
            Ok(GeneratedFrame {
                gen_index: rec[0].parse().map_err(|_| bad())?,
                image_path: base.join(&rec[1]),
                seed: rec[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Latent dataset file: `count`, `height`, `width` as little-endian `u64`,
/// then the values as little-endian `f64`.
pub fn write_latents(path: &Path, latents: &Tensor) -> Result<()> {
    let &[n, 1, h, w] = latents.shape() else {
        return Err(Error::Data(format!("latents must be [n, 1, h, w], got {:?}", latents.shape())));
    };
    let mut bytes = Vec::with_capacity(24 + latents.len() * 8);
    for v in [n, h, w] {
        bytes.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in latents.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).at(path)
}

pub fn read_latents(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).at(path)?;
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 24 {
        return Err(bad("latent file header is truncated".into()));
    }
    let field = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap()) as usize;
    let (n, h, w) = (field(0), field(1), field(2));
    let body = &bytes[24..];
    if n == 0 || h == 0 || w == 0 || body.len() != n * h * w * 8 {
        return Err(bad(format!("expected {n}x{h}x{w} values, found {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&[n, 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn loss_arithmetic() {
        assert_eq!(critic_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(critic_loss(&[0.3, 0.3], &[0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(g_loss(&[4.0, 6.0], &[1.0, 3.0]).unwrap(), 3.0);
        assert_eq!(g_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(critic_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn architectures_match_shapes() {
        let cae = CaeModel::new(&CaeConfig::desk(40, 120), &InitConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(cae.encoder().output_shape(), &[1, 8, 8]);
        assert_eq!(cae.decoder().output_shape(), &[1, 40, 120]);
        let convs = cae.encoder().summary().iter().filter(|l| l.1 == "conv2d").count();
        let dense = cae.encoder().summary().iter().filter(|l| l.1 == "dense").count();
        assert_eq!((convs, dense), (3, 4));
        let wgan = WganModel::new(&WganConfig::default(), &InitConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(wgan.generator().output_shape(), &[1, 8, 8]);
        assert_eq!(wgan.critic().output_shape(), &[1]);
        assert!(wgan.critic().store().max_abs() <= 0.01);
    }

    #[test]
    fn latent_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.bin");
        let t = Tensor::from_fn(&[3, 1, 2, 4], |i| i as f64 * 0.1 - 1.0);
        write_latents(&path, &t).unwrap();
        assert_eq!(read_latents(&path).unwrap(), t);
        fs::write(&path, &fs::read(&path).unwrap()[..40]).unwrap();
        assert!(read_latents(&path).is_err());
    }
}
