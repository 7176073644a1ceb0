use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("weights do not form a probability distribution: {0}")]
    NotADistribution(String),

    #[error("power iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("no stored transition for the requested (state, action) key")]
    MissingKey,

    #[error("this update rule needs a target network")]
    MissingTargetNet,

    #[error("environment stepped after a terminal transition; reset it first")]
    StepAfterTerminal,

    #[error("parameters diverged (non-finite value at step {step})")]
    Diverged { step: u64 },

    #[error("need at least {needed} runs to aggregate, got {got}")]
    TooFewRuns { needed: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
