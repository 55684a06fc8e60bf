//! Cooking-state classification: tensors, layers, an Inception V3 graph,
//! optimizers, a data pipeline, training and evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks). The aliases below name the two instantiations.

pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod sstf;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
