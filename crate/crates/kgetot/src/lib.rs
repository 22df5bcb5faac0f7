//! Knowledge-graph entity typing: infer the missing types of entities from
//! their relational, type, and cluster neighborhoods.
//!
//! The pipeline splits type knowledge into three graph views (entity–type,
//! entity–cluster, type–cluster–type), encodes each with a graph
//! convolution, aligns the view-specific embedding spaces by entropic
//! optimal transport, scores all types from every neighbor through a
//! translation head, and aggregates the votes with a max/mean/multi-head
//! softmax pooling mixture. Training uses a density-weighted cross-entropy
//! over the full type vocabulary to soften false negatives.
//!
//! Entry points:
//! - [`graph::load_dataset`] → [`model::prepare`] → [`train::train`]
//! - [`eval::evaluate`] for filtered MRR / Hits@K
//! - [`variants`] for frequency splits and sparse-neighbor versions
//! - [`cli::run`] wires everything behind the `kgetot` binary
//!
//! The `examples/` directory has one runnable walkthrough per capability;
//! start with `cargo run --example train_tiny`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod manifest;
pub mod model;
pub mod optim;
pub mod ot;
pub mod seeds;
pub mod sparse;
pub mod synth;
pub mod tape;
pub mod train;
pub mod typing;
pub mod variants;
pub mod views;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil {
    use std::path::Path;

    use crate::graph::{load_dataset_from_readers, Dataset};

    /// Builds a dataset from in-memory tab-separated records.
    pub fn load_from_strs(
        triples: &str,
        train: &str,
        valid: &str,
        test: &str,
    ) -> crate::Result<Dataset> {
        let p = Path::new;
        load_dataset_from_readers(
            (triples.as_bytes(), p("triples")),
            (train.as_bytes(), p("train")),
            (valid.as_bytes(), p("valid")),
            (test.as_bytes(), p("test")),
        )
    }
}
