//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent. Names the field.
    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    /// Marketplace or log generation cannot proceed (e.g. a category with no ads).
    #[error("generation error: {0}")]
    Generation(String),

    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Internal consistency violation, typically a vocabulary/checkpoint mismatch.
    #[error("internal error: {0}")]
    Internal(String),

    /// A numerical abort: non-finite loss or activation.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A persisted artifact could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    /// Two artifacts that must share an origin do not match.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
