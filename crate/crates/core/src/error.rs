use std::fmt;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, capacity, range).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input data is well-formed but unusable (single class, too few rows).
    #[error("validation error: {0}")]
    Validation(String),
    /// A cell is missing during ingestion.
    #[error("ingestion error: missing value at row {row}, column {column}")]
    Missing { row: usize, column: String },
    /// A cell failed to parse.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    /// A serialized artifact is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// The requested combination is not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A non-finite value appeared during optimization.
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn contract(msg: impl fmt::Display) -> Self {
        Error::Contract(msg.to_string())
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        Error::Validation(msg.to_string())
    }

    pub fn format(msg: impl fmt::Display) -> Self {
        Error::Format(msg.to_string())
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Validation(_) => "validation",
            Error::Missing { .. } => "missing",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Unsupported(_) => "unsupported",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
