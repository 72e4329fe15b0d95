//! End-to-end learning of weighted directed multi-layer graph structure and
//! signal features from raw multi-channel time series, with classification
//! on top of the extracted graph, plus tooling that scores the consistency
//! of extracted graphs across training repetitions and aggregates
//! representative structures.

pub mod checkpoint;
pub mod error;
pub mod features;
pub mod graph;
pub mod membership;
pub mod nn;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{grad_check, zero_grads, Activation, AdamState, Tensor};
