use qgan_nn::NnError;
use qgan_quat::QuatError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model spec `{spec}`: {violated}")]
    InvalidSpec { spec: String, violated: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{0}")]
    Input(String),
}

impl From<QuatError> for ModelError {
    fn from(e: QuatError) -> Self {
        ModelError::Nn(e.into())
    }
}
