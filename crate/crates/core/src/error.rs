use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("node `{0}` has a constant series")]
    ConstantColumn(String),

    #[error("window of {window} samples exceeds panel length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("insufficient samples: T = {samples} with lag order {lag}")]
    InsufficientSamples { samples: usize, lag: usize },

    #[error("invalid lag order: {0}")]
    InvalidLag(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("series has fewer than two distinct values")]
    DegenerateSeries,

    #[error("linear system for column {column} is singular")]
    SingularSystem { column: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("node labels differ between runs: {0}")]
    LabelMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
