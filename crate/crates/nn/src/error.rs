use qgan_quat::QuatError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Quat(#[from] QuatError),
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("node {id} does not exist (tape has {len} nodes)")]
    DanglingNode { id: usize, len: usize },
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("loss must be a real scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("running statistics are uninitialized; run a training step first")]
    UninitializedStats,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}
