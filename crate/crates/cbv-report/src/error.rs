use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: {message}")]
    Parse { file: String, message: String },

    #[error("integrity error in {file}: manifest says {expected}, file hashes to {actual}")]
    Integrity {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("package error: {0}")]
    Package(String),

    #[error("cannot emit document, missing required field(s): {}", .0.join(", "))]
    Emission(Vec<String>),

    #[error(transparent)]
    Core(#[from] cbv_core::Error),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::Io { .. } => "io",
            ReportError::Parse { .. } => "parse",
            ReportError::Integrity { .. } => "integrity",
            ReportError::Package(_) => "package",
            ReportError::Emission(_) => "emission",
            ReportError::Core(e) => e.code(),
        }
    }

    pub(crate) fn parse(file: impl Into<String>, message: impl ToString) -> Self {
        ReportError::Parse {
            file: file.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.into(),
            source,
        }
    }
}
