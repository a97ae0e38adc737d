//! Small reverse-mode engine for plain 3x3 convolutional networks.
//!
//! Every layer records what its backward pass needs during `forward`;
//! `backward` consumes that record, accumulates parameter gradients and
//! returns the input gradient.

pub mod activation;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod network;
pub mod optim;
mod real;
mod tensor;
mod winograd;

pub use activation::LeakyRelu;
pub use batchnorm::{BatchNorm2d, BatchNormParams};
pub use conv::{Conv2d, ConvAlgorithm, ConvLayerParams};
pub use network::{Layer, Network, NetworkSpec};
pub use optim::{AdamW, AdamWConfig, Sgd};
pub use real::Real;
pub use tensor::Tensor4;
