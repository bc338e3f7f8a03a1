use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot parse {source_name} at `{path}`: {message}")]
    Parse { source_name: String, path: String, message: String },
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Core(#[from] lmo_core::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Validation { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// True for errors caused by the user's input rather than a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Parse { .. } | HarnessError::Validation { .. } | HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::Json(_)
        )
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
