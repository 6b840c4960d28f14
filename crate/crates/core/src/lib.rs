//! Selection-conditional conformal prediction.
//!
//! Prediction intervals that keep the false coverage-statement rate (FCR)
//! at a target level when intervals are only reported for test units picked
//! by a data-dependent selection rule.

pub mod cli;
pub mod error;
pub mod intervals;
pub mod io;
pub mod metrics;
pub mod order_stats;
pub mod predictors;
pub mod selection;
pub mod selfcheck;
pub mod simulate;

pub use error::{Result, ScopError};

/// Library version, echoed into every results file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
