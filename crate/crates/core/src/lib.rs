//! Image restoration under multiple degradations, built from scratch:
//! a reverse-mode autodiff engine with double-backward support, degradation
//! operators (masks, blur kernels, downsampling, noise), small reference
//! architectures split as `f = h . g`, and the unrolled inner-ADAM latent
//! refinement module that trains end-to-end through the refinement loop.
//!
//! The numeric core is generic over the scalar type; the aliases below fix
//! `f64`, which everything desk-scale uses.

pub mod data;
pub mod degrade;
pub mod dlnet;
pub mod error;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense `f64` tensor (the concrete instantiation used by the harness).
pub type Tensor = tensor::Tensor<f64>;
/// Gradient map over `f64` tensors.
pub type Gradients = tensor::Gradients<f64>;
/// Network of `f64` parameters.
pub type Network = net::Network<f64>;
/// Degradation spec carrying `f64` mask/kernel tensors.
pub type DegradationSpec = degrade::DegradationSpec<f64>;
