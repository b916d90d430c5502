use std::path::PathBuf;

/// Errors produced anywhere in the offline/online ROM pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("degenerate state: element {element} has det F = {det:e}")]
    DegenerateState { element: usize, det: f64 },

    #[error("no convergence after {iterations} iterations in load step {step} (residual norm {residual_norm:e})")]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual_norm: f64,
    },

    #[error("ROM did not converge after {iterations} iterations in load step {step} (reduced residual norm {residual_norm:e})")]
    RomNonConvergence {
        step: usize,
        iterations: usize,
        residual_norm: f64,
        trace: Vec<crate::rom::RomTraceRow>,
    },

    #[error("{failed} of {total} FOM solves failed (more than 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("requested {requested} modes but sigma ratio at that rank is {ratio:e}")]
    RankDeficient { requested: usize, ratio: f64 },

    #[error("singular reduced system (condition estimate {condition_estimate:e})")]
    SingularReducedSystem { condition_estimate: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("residual-loss training requires a manifold warm-started from snapshot-loss training")]
    ColdResidualStart,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("refusing to overwrite {0} (use --force)")]
    AlreadyExists(PathBuf),

    #[error("hash mismatch for {artifact}: recorded {recorded}, expected {expected}")]
    HashMismatch {
        artifact: String,
        recorded: String,
        expected: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from a nonlinear solver failing to converge.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::RomNonConvergence { .. }
                | Error::TooManyFailures { .. }
                | Error::SingularReducedSystem { .. }
                | Error::DegenerateState { .. }
        )
    }
}
