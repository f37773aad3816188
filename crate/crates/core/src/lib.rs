//! Linguistic profiling and layerwise probing of sentence embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`conllu`] reads dependency treebanks,
//! * [`profiler`] turns each sentence into a vector of linguistic features,
//! * [`embstore`] reads and writes layerwise sentence embeddings and joins
//!   them with feature profiles,
//! * [`stats`] holds the rank statistics and clustering primitives,
//! * [`probe`] trains cross-validated linear SVR probes,
//! * [`pipeline`] runs the profiling, comparison and split analyses and
//!   renders their reports.

pub mod conllu;
pub mod embstore;
pub mod error;
pub mod pipeline;
pub mod probe;
pub mod profiler;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
