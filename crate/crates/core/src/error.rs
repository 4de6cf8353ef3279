use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid reward function: {0}")]
    InvalidReward(String),
    #[error("invalid feature space: {0}")]
    InvalidSpace(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("feature count {0} out of range 1..=8")]
    DimensionOutOfRange(usize),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("prior has empty support")]
    EmptySupport,
    #[error("true reward function has zero prior mass")]
    TruthNotInSupport,
    #[error("true reward function was eliminated by the update")]
    TruthEliminated,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("indifferent user: all ratings map to the zero reward function")]
    IndifferentUser,
    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("policy failure: {0}")]
    Policy(Box<crate::assistants::PolicyError>),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
