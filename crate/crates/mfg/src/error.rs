//! Crate-wide error type and result alias.

use thiserror::Error;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, MfgError>;

/// Unified error type for solver, reference, and I/O failures.
#[derive(Debug, Error)]
pub enum MfgError {
    /// Array dimensions do not compose (layer shapes, batch widths, and so on).
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A setting is missing, malformed, or inconsistent with the problem.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A config file failed to parse; points at the offending line.
    #[error("{path}:{line}: {message}")]
    ConfigParse {
        path: String,
        line: usize,
        message: String,
    },

    /// The empirical measure cannot supply a required statistic.
    #[error("measure error: {0}")]
    Measure(String),

    /// The ODE reference solver failed (step underflow, shooting divergence).
    #[error("reference solver error: {0}")]
    Reference(String),

    /// A metric is undefined for the given inputs (zero denominator).
    #[error("metric error: {0}")]
    Metric(String),

    /// A training loss became non-finite; the run aborts.
    #[error("training diverged at iteration {iteration}; last checkpoint: {checkpoint}")]
    Divergence { iteration: usize, checkpoint: String },

    /// A checkpoint file is unreadable or incompatible with the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying file-system failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MfgError {
    /// Shorthand for shape errors built from displayable dimensions.
    pub fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        MfgError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
