use thiserror::Error;

/// Errors raised by the qudit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level {level} out of range for dimension {dim}")]
    LevelOutOfRange { level: usize, dim: usize },

    #[error("invalid target set: {0}")]
    InvalidTargets(String),

    #[error("invalid drive tones: {0}")]
    InvalidTones(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("malformed gate sequence: {0}")]
    MalformedSequence(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("time bracket does not contain a fidelity transition: {0}")]
    BracketFailure(String),

    #[error("state norm underflow ({norm:e}) at slice {slice}")]
    NormUnderflow { norm: f64, slice: usize },

    #[error("missing pulse for {0}")]
    MissingPulse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
