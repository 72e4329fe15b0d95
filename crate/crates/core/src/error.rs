//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by tensor operations, model construction, data handling
/// and analysis tooling.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape or dimension mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Invalid argument value (out-of-range label, bad fraction, ...).
    #[error("invalid argument: {0}")]
    Arg(String),

    /// A caller violated an API contract (non-scalar backward root,
    /// misaligned instance ids, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or inconsistent experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error in {path} at {location}: {detail}")]
    Parse {
        path: String,
        location: String,
        detail: String,
    },

    /// Training aborted on a non-finite loss.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
