use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for volume {n}")]
    IndexOutOfRange { index: i64, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tabulated density is not normalized (integral {0})")]
    NotNormalized(f64),

    #[error("inconsistent constraints: {0}")]
    InconsistentConstraints(String),

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("horizon {requested} exceeds table limit {limit}")]
    TableLimit { requested: usize, limit: usize },

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
