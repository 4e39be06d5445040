use thiserror::Error;

/// Errors produced by the solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A solve or eigen-decomposition failed to reach its tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The state stopped being finite or exceeded the configured ceiling.
    #[error("suspected blow-up at t = {t}: {reason}")]
    BlowupSuspected { t: f64, reason: String },

    /// The requested step exceeds the transport stability limit.
    #[error("time step {dt:e} exceeds the CFL limit {dt_max:e}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
