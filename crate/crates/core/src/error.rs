//! Crate error type.

use thiserror::Error;

/// Errors surfaced by model loading, solvers, and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Config document failed to parse.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// A config value violates a model invariant; `key` is the config path.
    #[error("invalid config value at `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    /// Operation preconditions violated (bad argument combinations).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The grid solver only supports simplex dimensions up to 2 (N <= 3).
    #[error("grid solver supports N <= 3 types, got N = {0}")]
    GridUnsupported(usize),

    /// Inner fixed point for the implicit Z-relation failed at a grid node.
    #[error("Z fixed point did not converge at t = {t}, node {node:?}")]
    FixedPoint { t: f64, node: Vec<f64> },

    /// Picard iteration did not contract within the iteration cap.
    #[error("Picard iteration did not converge in {iterations} iterations (last delta {last_delta:e})")]
    PicardDiverged {
        iterations: usize,
        last_delta: f64,
        deltas: Vec<f64>,
    },

    /// All filter log-weights underflowed simultaneously on one path.
    #[error("filter weight underflow on path {path} at step {step}")]
    WeightUnderflow { path: usize, step: usize },

    /// Regression design matrix is numerically rank deficient and could not
    /// be repaired by degree reduction.
    #[error("degenerate regressors: {0}")]
    DegenerateRegressors(String),

    /// One-step oracle fixed point failed.
    #[error("oracle fixed point did not converge after {0} iterations")]
    OracleFixedPoint(usize),
}
