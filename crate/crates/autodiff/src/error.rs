use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("no value fed for input `{0}`")]
    MissingInput(String),

    #[error("no output named `{0}`")]
    UnknownOutput(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
