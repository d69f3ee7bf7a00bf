use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] soundmorph::Error),

    #[error("config error in {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("server error: {0}")]
    Server(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Server(_) => "server",
        }
    }

    /// Single-line JSON object for standard error.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string().replace('\n', " "),
        })
        .to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
    CliError::Core(soundmorph::Error::Io {
        path: path.into(),
        source,
    })
}
