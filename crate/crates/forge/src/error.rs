use std::path::{Path, PathBuf};

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error(transparent)]
    Core(#[from] lda_core::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: checkpoint error: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl ForgeError {
    pub fn config(msg: impl Into<String>) -> Self {
        ForgeError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl Into<String>) -> Self {
        ForgeError::Parse {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn checkpoint(path: &Path, message: impl Into<String>) -> Self {
        ForgeError::Checkpoint {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// 3 for numeric failures during a run, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            ForgeError::Core(lda_core::Error::Divergence { .. })
            | ForgeError::Core(lda_core::Error::NumericDomain { .. }) => 3,
            _ => 2,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| ForgeError::io(path, e))
    }
}
