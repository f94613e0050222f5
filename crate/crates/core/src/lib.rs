//! Deep clustering with graph contrastive learning.
//!
//! A small MLP encoder maps each sample to a unit-norm representation `z` and
//! a soft cluster assignment `p`. Training contrasts representations over a
//! KNN graph built on a moving average of past embeddings, contrasts cluster
//! assignment columns between graph neighbors, and regularizes cluster sizes.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the CLI uses.

pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Encoder = model::EncoderParams<f64>;
pub type Store = graph::EmbeddingStore<f64>;
pub type Unit = types::UnitVector<f64>;
pub type Prob = types::ProbVector<f64>;
pub type Assignments = types::AssignmentMatrix<f64>;
pub type State = trainer::TrainState<f64>;
pub type Outcome = trainer::TrainOutcome<f64>;
