use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, shapes: &[&[usize]]) -> DiffError {
    let shapes = shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ");
    DiffError::Shape { op, shapes }
}
