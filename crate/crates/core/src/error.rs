use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("y = {y} lies outside lane extent [{min}, {max}]")]
    OutOfRange { y: f64, min: f64, max: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid lane: {0}")]
    InvalidLane(String),

    #[error("lane [{lane_min}, {lane_max}] has no visible preset point")]
    NoOverlap { lane_min: f64, lane_max: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("step `{step}` failed: {source}")]
    StepFailed {
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: line {line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn lane(msg: impl Into<String>) -> Self {
        Error::InvalidLane(msg.into())
    }

    /// True when the error stems from user-supplied configuration rather
    /// than from a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::DimensionMismatch { .. } | Error::ShapeMismatch(_)
        )
    }
}
