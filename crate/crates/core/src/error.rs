use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum IsdeError {
    /// A numeric argument is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An observation lies outside the unit cube.
    #[error("data error: value {value} at row {row}, column {col} is outside [0, 1]")]
    DataRange { row: usize, col: usize, value: f64 },

    /// Malformed input data (unparseable CSV, ragged rows, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Shapes or set structures do not fit together (overlapping blocks,
    /// dimension mismatch, missing table entries).
    #[error("structural error: {0}")]
    Structural(String),

    /// The hypothesis under which a bound holds is not met.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// A matrix expected to be positive definite could not be factorized.
    #[error("factorization error: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl IsdeError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        IsdeError::Parameter(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        IsdeError::Structural(msg.into())
    }

    /// Process exit code used by the command-line tool: 2 for parameter-like
    /// errors, 3 for data and I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            IsdeError::Parameter(_)
            | IsdeError::Structural(_)
            | IsdeError::Precondition(_)
            | IsdeError::Factorization(_) => 2,
            IsdeError::DataRange { .. }
            | IsdeError::Data(_)
            | IsdeError::Io(_)
            | IsdeError::Json(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, IsdeError>;
