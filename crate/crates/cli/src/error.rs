use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// TOML syntax or schema error; the message carries line and key.
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {invariant} ({detail})")]
    Invalid { invariant: String, detail: String },

    #[error(transparent)]
    Model(#[from] ergobound::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}: {detail}")]
    Csv { path: String, detail: String },

    #[error("render: {0}")]
    Render(String),
}

impl CliError {
    pub fn invalid(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Invalid {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn csv(path: &Path, detail: impl ToString) -> Self {
        CliError::Csv {
            path: path.display().to_string(),
            detail: detail.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
