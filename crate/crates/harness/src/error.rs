use std::path::PathBuf;

use qgan_models::ModelError;
use qgan_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure at iteration {iteration}: {detail}")]
    Numeric { iteration: u64, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} parse error at byte {offset}: {msg}")]
    Parse {
        what: &'static str,
        offset: usize,
        msg: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        HarnessError::Model(e.into())
    }
}

impl From<qgan_quat::QuatError> for HarnessError {
    fn from(e: qgan_quat::QuatError) -> Self {
        HarnessError::Model(e.into())
    }
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for numeric
    /// failures, 3 for I/O and file-format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Model(ModelError::InvalidSpec { .. } | ModelError::UnknownPreset(_)) => 1,
            HarnessError::Numeric { .. } => 2,
            HarnessError::Io { .. } | HarnessError::Parse { .. } => 3,
            HarnessError::Model(_) => 2,
        }
    }
}
