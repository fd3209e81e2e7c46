use thiserror::Error;

/// Errors produced by the kernel operator library.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose dimensions or lengths do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A request beyond what a kernel, operator or function was built to provide
    /// (for instance a derivative order above the configured maximum).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// Invalid configuration values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Factorization or solve failure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A metric that is not defined for its inputs (zero reference norm).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input files (CSV shards, checkpoints, config files).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
