use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed observations: non-finite values, unknown metrics, bad groups.
    #[error("data quality: {0}")]
    DataQuality(String),

    /// Not enough observations to run the requested estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    /// The rollout already ended (reverted or completed); no further steps accepted.
    #[error("rollout is terminal: {0}")]
    Terminal(String),

    /// Snapshot incompatible with this plan or schema version.
    #[error("snapshot mismatch: {0}")]
    Snapshot(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// serde_json errors carry line/column of the offending input.
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
