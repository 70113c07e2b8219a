use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] nbe_core::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 3 when training diverged numerically, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(nbe_core::Error::NonFiniteLoss { .. } | nbe_core::Error::Numeric(_)) => 3,
            _ => 2,
        }
    }
}
