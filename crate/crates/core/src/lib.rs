//! Surrogate modelling of topology-optimization frames.
//!
//! The pipeline generates SIMP compliance-minimization frames
//! ([`topopt`]), learns a tiled convolutional regressor from frame to
//! compliance ([`cic`]), compresses frames with a convolutional autoencoder
//! and trains a weight-clipped Wasserstein GAN in that latent space
//! ([`wgan_cae`]), and densifies the optimization timeline with generated
//! frames placed by interpolated compliance ([`reconstruct`]).

pub mod dataset;
pub mod cic;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pgm;
pub mod reconstruct;
pub mod rng;
pub mod tensor;
pub mod wgan_cae;
pub mod topopt;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use dataset::{Frame, FrameDataset, NormKind, NormSpec};
pub use pgm::GrayImage;
