//! Two-stage product search relevance.
//!
//! Upstream class-probability vectors for each query-product pair are enriched
//! with query-group features, fused by a gradient-boosted tree stage, and turned
//! into ranked lists (task 1), four-way labels (task 2) and substitute flags
//! (task 3). The [`sched`] module models the padding cost of batched encoder
//! inference.
//!
//! Data-parallel loops go through [`par`]; with the default `parallel` feature
//! they run on rayon, otherwise sequentially. Results are identical either way.

pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rank;
pub mod sched;

pub use error::{Error, Result};
pub use par::Exec;
