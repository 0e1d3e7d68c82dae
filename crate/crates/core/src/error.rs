use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// An aggregated state-action cell (or estimation bin) has too few observations.
    #[error("coverage failure: {0}")]
    Coverage(String),

    #[error("reward {value} at state {state}, action {action} exceeds declared bound {r_max}")]
    RewardBound {
        state: usize,
        action: usize,
        value: f64,
        r_max: f64,
    },

    #[error("bound undefined: sample-size precondition violated by margin {margin}")]
    BoundUndefined { margin: f64 },

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
