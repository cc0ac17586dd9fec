use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration file or flag combination.
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    /// Files that parse but do not belong together.
    #[error("{0}")]
    Mismatch(String),

    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] motpose_core::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        HarnessError::Malformed {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    /// Short tag printed in the error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Usage(_) => "usage",
            HarnessError::Mismatch(_) => "mismatch",
            HarnessError::Malformed { .. } => "malformed",
            HarnessError::Io { .. } => "io",
            HarnessError::Core(motpose_core::Error::Config(_)) => "config",
            HarnessError::Core(motpose_core::Error::Numeric(_)) => "numeric",
            HarnessError::Core(_) => "runtime",
        }
    }

    /// Process exit status: 2 for configuration and usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "usage" => 2,
            _ => 1,
        }
    }

    /// The whole error on one line: `motpose: error[kind]: message`.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("motpose: error[{}]: {}", self.kind(), msg.trim())
    }
}
