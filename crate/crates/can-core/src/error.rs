use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that cannot be combined; the message names both shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument outside an operation's domain (bad label, empty mask, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed text input, with the 1-based line it was found on.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally well-formed input that violates a documented constraint.
    #[error("validation error: {0}")]
    Validation(String),

    /// Inconsistent run configuration (empty splits, vocabulary mismatch, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
