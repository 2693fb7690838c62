use thiserror::Error;

/// Errors surfaced by the field, material and geometry layers.
#[derive(Debug, Error)]
pub enum EwError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("signature error: spatial metric block not positive definite at point {index} (min eigenvalue {min_eig})")]
    Signature { index: usize, min_eig: f64 },

    #[error("hyperbolicity violated: margin {margin} at t = {time}")]
    Hyperbolicity { margin: f64, time: f64 },

    #[error("instability: {cause} at t = {time}")]
    Instability { cause: String, time: f64 },

    #[error("insufficient snapshots: need {needed}, have {have}")]
    InsufficientSnapshots { needed: usize, have: usize },

    #[error("time {time} outside snapshot coverage [{t0}, {t1}]")]
    OutsideCoverage { time: f64, t0: f64, t1: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, EwError>;

impl EwError {
    pub fn contract(msg: impl Into<String>) -> Self {
        EwError::Contract(msg.into())
    }
}
