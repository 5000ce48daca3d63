//! Video clip classifier: a per-frame CNN applied across time, a
//! bidirectional LSTM, weighted-sum attention and a dense softmax head, with
//! everything needed to train and evaluate it from scratch.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{build_model, Backbone, Model, ModelConfig};
pub use rng::{Rng, Stream};
pub use tensor::Tensor;
