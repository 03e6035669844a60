use thiserror::Error;

/// Errors surfaced by data loading, validation, and the test pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {msg}")]
    Validation { row: usize, msg: String },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
