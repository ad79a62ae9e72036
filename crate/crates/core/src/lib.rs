//! AWD-LSTM language models and ULMFiT-style transfer learning for binary
//! text classification, with a degradation benchmark harness for measuring
//! how accuracy holds up as labeled training data shrinks.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the width for the common cases.

pub mod checkpoint;
pub mod error;
pub mod evalbench;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod textpipe;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type AwdLstm32 = model::AwdLstm<f32>;
pub type AwdLstm64 = model::AwdLstm<f64>;
pub type TextClassifier32 = model::TextClassifier<f32>;
pub type TextClassifier64 = model::TextClassifier<f64>;
