//! Error type shared across the crate.
//!
//! Only genuinely invalid inputs are errors. Soft outcomes — an optimizer
//! exhausting its budget, a certification check failing on valid input —
//! are reported in result structs, not through `Err`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument: out-of-range coordinate, dimension mismatch,
    /// unsupported parameter combination.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical routine left its domain of validity (e.g. an evaluation
    /// at a coordinate-frame singularity).
    #[error("numerical domain error: {0}")]
    Numerical(String),

    /// Serialization or file I/O failure when reading/writing node sets,
    /// polynomials, or reports.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON payload for a serialized object.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
