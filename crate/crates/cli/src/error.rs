use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("path not found: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("invalid config {}: {reason}", path.display())]
    Config { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] graphvar::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for anything the user must fix before rerunning, 1 for failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::MissingPath(_) | CliError::Config { .. } => 2,
            CliError::Core(graphvar::Error::MissingFile(_)) => 2,
            _ => 1,
        }
    }
}
