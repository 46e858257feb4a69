use thiserror::Error;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        row: u64,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: cannot parse timestamp {text:?}")]
    Timestamp { row: u64, text: String },

    #[error("row {row}: column {column:?} is not a number: {text:?}")]
    NotANumber {
        row: u64,
        column: String,
        text: String,
    },

    #[error("missing column {0:?} in header")]
    MissingColumn(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("encoding hash mismatch: checkpoint has {checkpoint}, encoding model has {encoding}")]
    HashMismatch { checkpoint: String, encoding: String },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] autograd::AdError),
}

impl CoreError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CoreError::Config(_) | CoreError::Json(_) => ErrorClass::Config,
            CoreError::NonFinite(_) | CoreError::Tensor(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
