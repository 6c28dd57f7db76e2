use std::path::PathBuf;

use thiserror::Error;

/// Failures of the command-line layer, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{format} line {line}: {msg}")]
    Format {
        format: &'static str,
        line: usize,
        msg: String,
    },
}

impl CliError {
    /// 1 for invalid input of any kind, 2 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<tkp_core::Error> for CliError {
    fn from(e: tkp_core::Error) -> Self {
        match e {
            tkp_core::Error::NonFinite { .. } => CliError::Numerical(e.to_string()),
            e => CliError::Invalid(e.to_string()),
        }
    }
}
