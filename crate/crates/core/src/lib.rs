//! Symmetric convolution/deconvolution encoder-decoders with mirrored skip
//! connections for image denoising and super-resolution. Layers run on a
//! small tensor type with hand-written backward passes.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases
//! below name the common concrete types.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Network, RedNetConfig, SkipEdge, SkipStyle};
pub use scalar::Real;
pub use tensor::{Shape4, Tensor4};

pub type Tensor = Tensor4<f32>;
pub type Tensor64 = Tensor4<f64>;
pub type RedNet = Network<f32>;
pub type RedNet64 = Network<f64>;
pub type ImageGray = data::Image<f32>;
pub type ImageGray64 = data::Image<f64>;
