//! Abstract anaphora resolution toolkit.
//!
//! The crate is organised along the data flow of the system:
//!
//! * [`treebank`] reads bracketed constituency trees and enumerates constituents.
//! * [`datagen`] cuts embedded clauses out of parsed sentences to produce
//!   artificial anaphoric-sentence / antecedent pairs.
//! * [`corpus`] turns pairs or annotated corpora into ranking instances.
//! * [`tensor`] is a small reverse-mode differentiation engine, checked by
//!   [`gradcheck`].
//! * [`model`] is the siamese bi-LSTM mention-ranking scorer.
//! * [`train`] holds the max-margin training loop.
//! * [`eval`] computes success@n, the baselines and analysis dumps.
//! * [`synthetic`] is a small generated treebank for tests and demos.

pub mod config;
pub mod corpus;
pub mod datagen;
mod error;
pub mod eval;
pub mod glove;
pub mod gradcheck;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod treebank;

pub use error::{Error, Result};

/// Number of worker threads to use for read-only evaluation.
///
/// Honours the `AAK_THREADS` environment variable and falls back to the
/// available parallelism of the host.
pub fn worker_threads() -> usize {
    std::env::var("AAK_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}
