//! Hand-written forward/backward network engine.

pub mod checkpoint;
pub mod gradcheck;
mod layer;
mod network;
mod params;

pub use layer::{conv_output_size, Activation, LayerSpec, Padding, ParamKind, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use network::Network;
pub use params::{Gradients, InitConfig, Param, ParamStore};
