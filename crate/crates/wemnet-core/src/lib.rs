//! Weight-based masking for unsupervised domain adaptation, on a small
//! reverse-mode autodiff core.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod masks;
pub mod model;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default-precision tensor handle.
pub type Tensor = tensor::Tensor<f64>;
/// Default-precision gradient tape.
pub type Tape = tape::Tape<f64>;
/// Default-precision model.
pub type WemnetModel = model::WemnetModel<f64>;
/// Default-precision optimizer.
pub type SgdOptimizer = nn::SgdOptimizer<f64>;
/// Default-precision dataset.
pub type Dataset = data::Dataset<f64>;
