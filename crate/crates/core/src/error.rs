use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("rank {rank} infeasible: {reason}")]
    RankInfeasible { rank: usize, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("undefined residual: reference tensor is zero on the mask")]
    ZeroReference,
    #[error("empty observation mask")]
    EmptyMask,
    #[error("insufficient support: {0}")]
    InsufficientSupport(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("duplicate record for key {0}")]
    DuplicateKey(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
