use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Array or matrix dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An object was used in a state that does not allow the operation.
    #[error("invalid state: {0}")]
    State(String),
    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in {0}")]
    Numeric(String),
    /// Caller-supplied data violates a precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// A hyperparameter or model parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A configuration field is missing or invalid.
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },
    /// Serialized data (checkpoint, JSON model) is malformed.
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_owned(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
