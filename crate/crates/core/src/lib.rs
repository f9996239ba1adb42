//! Semantic-hierarchy hashing.
//!
//! Trains a small encoder whose embeddings, once thresholded into binary
//! codes, have Hamming distances that track distances between labels in a
//! class taxonomy. The crate is `no_std` (it needs `alloc`); file formats and
//! the command-line pipeline live in the `shrewd-pipeline` crate.
//!
//! Pipeline:
//!
//! 1. [`hierarchy`] parses a taxonomy and derives normalized label distances.
//! 2. [`data`] generates hierarchical synthetic datasets and Beta target samples.
//! 3. [`model`] holds the encoder and classifier head with hand-derived backprop.
//! 4. [`losses`] implements the similarity, KL and classification terms.
//! 5. [`trainer`] runs seeded minibatch Adam training.
//! 6. [`hashing`] binarizes embeddings and serves exact Hamming top-k queries.
//! 7. [`metrics`] scores rankings with mAP and hierarchical precision.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod hashing;
pub mod hierarchy;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trainer;

mod sum;

pub use hierarchy::{NodeId, SemanticDistanceMatrix, Taxonomy};
pub use matrix::Matrix;
pub use rng::RngState;

/// Errors surfaced by the training pipeline, wrapping each module's error type.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Hierarchy(#[from] hierarchy::HierarchyError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Loss(#[from] losses::LossError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Hashing(#[from] hashing::HashingError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}
