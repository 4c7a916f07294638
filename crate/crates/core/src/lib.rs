//! Data side of the few-shot audio harness: domain types, offline
//! preparation, class splits, episode sampling and the synthetic corpus.

pub mod datasets;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod splits;
pub mod stats;
pub mod store;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
