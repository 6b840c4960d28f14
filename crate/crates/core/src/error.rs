use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum ScopError {
    /// Input violates an operation's domain (NaN scores, dimension mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Order-statistic rank outside `1..=len`.
    #[error("rank {rank} out of range for a sample of size {len}")]
    Range { rank: usize, len: usize },

    /// A selection rule or experiment parameter is invalid.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Conformal p-values need at least one calibration unit with `Y >= b0`.
    #[error("no null calibration units (no calibration response >= {b0})")]
    NoNullCalibration { b0: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV input; `row` is 1-based counting the header as row 1.
    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    /// Too many repetitions failed for the aggregate to be trusted.
    #[error("{failed} of {total} repetitions failed (limit is 1%); first failure: {first}")]
    NumericalFailure {
        failed: usize,
        total: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, ScopError>;
