use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: String,
        line: u64,
        field: String,
        message: String,
    },

    #[error("trace length {actual} != 1440")]
    TraceLength { actual: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("cannot impute empty series")]
    EmptySeries,

    #[error("unknown categorical level: {field} = {value}")]
    UnknownCategory { field: String, value: String },

    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,

    #[error("training data contains a single class")]
    SingleClass,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("t-test requires at least 2 pairs, got {0}")]
    TooFewPairs(usize),

    #[error("need at least {needed} users, got {got}")]
    TooFewUsers { needed: usize, got: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("bad feature cache: {0}")]
    FeatureCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
