use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TonerError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TonerError {
    #[error("schema mismatch: unknown entity type `{tag}`{}", fmt_line(*.line))]
    SchemaMismatch { tag: String, line: Option<usize> },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("referential integrity: {0}")]
    Referential(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

fn fmt_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl TonerError {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        TonerError::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn unknown_tag(tag: impl Into<String>) -> Self {
        TonerError::SchemaMismatch {
            tag: tag.into(),
            line: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TonerError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line: 2 for I/O and configuration
    /// problems, 1 for everything else (validation and evaluation failures).
    pub fn exit_code(&self) -> u8 {
        match self {
            TonerError::Io { .. } | TonerError::Config(_) | TonerError::Json { .. } => 2,
            _ => 1,
        }
    }
}
