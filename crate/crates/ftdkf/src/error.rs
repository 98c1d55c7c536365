use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("model assumptions violated: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("delay bound undefined: attenuation-free regime (log base is 1)")]
    BoundUndefined,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
