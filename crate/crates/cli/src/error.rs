use soliton_lab::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Syntax or validation failure; `line` is 1-based when known.
    #[error("config {path}{}: {field}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config { path: String, line: Option<usize>, field: String, message: String },

    #[error("job {job}: {source}")]
    Job {
        job: String,
        #[source]
        source: LabError,
    },

    #[error("expectation `{key}` names no quantity produced by job {job}")]
    MissingQuantity { job: String, key: String },

    #[error("record already exists at {0}; records are immutable")]
    RecordExists(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
