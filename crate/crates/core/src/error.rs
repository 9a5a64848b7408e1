use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),

    #[error("invalid field state: {0}")]
    InvalidField(String),

    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("state does not match the field variant: {0}")]
    VariantMismatch(String),

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("jump at vanishing intensity k = {k:e} (t = {t})")]
    VanishingIntensity { k: f64, t: f64 },

    #[error("jump times must be strictly increasing inside (0, {horizon})")]
    UnorderedJumpTimes { horizon: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
