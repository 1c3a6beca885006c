use std::path::PathBuf;

use mds_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("stage `{stage}` failed (seed {seed}): {source}")]
    Stage {
        stage: &'static str,
        seed: u64,
        #[source]
        source: CoreError,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("fixture mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        HarnessError::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            HarnessError::Config(_) => return 2,
            HarnessError::Stage { source, .. } | HarnessError::Core(source) => source,
            _ => return 1,
        };
        match core {
            CoreError::Numerical(_) | CoreError::NonFiniteGradient { .. } => 3,
            CoreError::InvalidArgument(_) | CoreError::Unsupported(_) => 2,
            CoreError::InvalidState(_) => 1,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str, seed: u64) -> Result<T>;
}

impl<T> StageExt<T> for std::result::Result<T, CoreError> {
    fn stage(self, stage: &'static str, seed: u64) -> Result<T> {
        self.map_err(|source| HarnessError::Stage {
            stage,
            seed,
            source,
        })
    }
}
