use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("problem file syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("invalid problem: {0}")]
    Semantic(String),
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),
    #[error("n_max {n_max} too small: instance needs {required} slots")]
    NMaxTooSmall { n_max: usize, required: usize },
    #[error("invalid routing order: {0}")]
    InvalidOrder(String),
    #[error("{0}")]
    Invalid(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
