//! Equitable prediction-for-many-agents: a shared forecaster trained so that
//! the regret it induces is spread evenly across a pool of decision makers.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod objective;
pub mod predictor;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
