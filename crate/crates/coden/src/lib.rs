//! Streaming temporal-graph embedding engine.
//!
//! Maintains propagation-based node embeddings incrementally under an edge
//! toggle stream, compresses their evolution into per-node linear
//! state-space states via lazy snapshot sampling, and trains classifier
//! heads for continuous node prediction. Ships the attention and
//! snapshot-only ablation variants, representation diagnostics, dense
//! verification oracles, and a synthetic dynamic-graph generator.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod learner;
pub mod ppr;
pub mod runner;
pub mod sampler;
pub mod ssm;

pub use error::{CodenError, Result};
