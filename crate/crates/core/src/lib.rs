//! Embedding-optimizer laboratory: a minimal tied-weight language model,
//! SGD, Adam and (Scaled) Coupled Adam, embedding-geometry metrics, the
//! second-moment probe and multi-seed significance testing.

pub mod corpus;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod stats;
