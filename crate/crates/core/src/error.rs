use std::fmt;

/// Errors produced by the planning library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value failed validation. `field` is a dotted path such as
    /// `weights.lambda_k` or `keyframes[2].stage`.
    #[error("{field}: {message}")]
    Validation { field: String, message: String },

    #[error("stage index {index} out of range for {stages} stages")]
    StageOutOfRange { index: usize, stages: usize },

    #[error("derivative of order {order} needs more than {order} stages, got {stages}")]
    TooFewStages { order: usize, stages: usize },

    #[error("{0}")]
    Diverged(Divergence),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Diagnostic attached to an aborted tracking simulation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Divergence {
    pub time: f64,
    pub stage: usize,
    pub position_error: f64,
    pub limit: f64,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "simulation diverged at t = {:.3} s (stage {}): position error {:.3} m exceeds {:.3} m",
            self.time, self.stage, self.position_error, self.limit
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
