//! Federated learning orchestration with a deterministic simulation harness.

// `!(x > 0.0)` is how range checks here reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod data;
pub mod experiment;
pub mod learner;
pub mod nn;
mod rng;
pub mod simulator;
pub mod weighting;
