//! Structured pruning toolkit and streaming inference/benchmark engine for a
//! CRUSE-style convolutional-recurrent denoiser.

pub mod bench;
pub mod error;
pub mod inference;
pub mod model;
pub mod pruning;
pub mod reparam;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{build_model, ModelSpec, ModelWeights, NetworkParam, Param};
pub use tensor::Tensor;
