use thiserror::Error;

/// Errors raised by the responder library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("invalid misclassification rates: {0}")]
    InvalidRates(String),

    /// `1 - fp - fn` fell below the admissible floor.
    #[error("degenerate misclassification rates: 1 - fp - fn = {0} is below the floor")]
    DegenerateRates(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("row {row}: {message}")]
    Schema { row: u64, message: String },

    #[error("no participants left after the per-protocol filter")]
    EmptyPerProtocol,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
