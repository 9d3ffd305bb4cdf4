#![allow(clippy::needless_range_loop)]

//! Coding-prior toolkit: a minimal block-based motion-compensated codec that
//! exposes its motion vectors and coding residuals as first-class priors,
//! plus the restoration kernels that consume them — motion-guided feature
//! propagation with modulated deformable alignment, prior-modulated
//! attention, and a spaced ancestral diffusion sampler with pluggable noise
//! predictors.

pub mod codec;
pub mod cpc;
pub mod cpfp;
pub mod io;
pub mod metrics;
pub mod params;
pub mod priors;
pub mod tensor;

pub use tensor::{Tensor, TensorError};
