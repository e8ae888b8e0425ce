//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameter, broken invariant, unknown key).
    #[error("configuration error: {0}")]
    Config(String),

    /// Configuration error tied to a specific line of a config or metrics file.
    #[error("configuration error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    /// Malformed argument to an operation (dimension mismatch, empty input, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Operation called in a state it cannot run in (missing snapshot data,
    /// non-finite gradient, ...).
    #[error("state error: {0}")]
    State(String),

    /// Checkpoint file could not be read or does not match the expected dims.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
