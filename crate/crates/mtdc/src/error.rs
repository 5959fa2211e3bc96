//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Network description violates a construction invariant.
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    /// A vector or matrix has the wrong length for the bus count.
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A controller or simulation parameter is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Scenario file could not be parsed.
    #[error("scenario error at line {line}: {msg}")]
    Scenario { line: usize, msg: String },

    /// Scenario parsed but fails cross-field validation.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A numerical routine failed (eigen-solver breakdown, singular solve, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Internal consistency check failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
