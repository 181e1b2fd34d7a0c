//! Causal inference with multiple causes via substitute confounders.
//!
//! The library fits probabilistic factor models to a matrix of assigned
//! causes, validates them with held-out predictive checks, and uses the
//! inferred per-individual latent variables (or the reconstructed causes)
//! as extra regressors in an outcome model. Semi-synthetic simulators and
//! an evaluation harness support end-to-end benchmarking against known
//! ground truth.

pub mod check;
pub mod cli;
pub mod data;
pub mod error;
pub mod factor;
pub mod kmeans;
pub mod metrics;
pub mod outcome;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod sim;

pub use data::{CauseKind, Dataset, HoldoutMask, ScalingRecord};
pub use error::{Error, Result};
pub use rng::RngStream;
