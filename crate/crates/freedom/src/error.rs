//! Error type shared by every module in the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Shapes of two operands do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value is outside the domain an operation is defined on
    /// (negative entries in a normalization, NaN features, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A hyperparameter or argument is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The dataset violates a structural requirement.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A configuration file or override could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// A binary or text artifact on disk does not match its format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
