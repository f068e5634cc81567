use std::path::PathBuf;

/// CLI failure classes, each mapped to a stable process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config file, bad field values. Exit code 2.
    #[error("config: {0}")]
    Config(String),
    /// Numerical failures bubbling out of the library. Exit code 3.
    #[error("numerical: {0}")]
    Numerical(#[from] kelora::Error),
    /// Filesystem trouble. Exit code 1.
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Dataset file problems; distinct from generic io so parse errors can
    /// name the offending row and column. Exit code 2.
    #[error("dataset: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Dataset(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    /// One machine-parseable line for standard error.
    pub fn stderr_line(&self) -> String {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Dataset(_) => "dataset",
            CliError::Numerical(_) => "numerical",
            CliError::Io { .. } => "io",
        };
        format!("kelora: error kind={kind} exit={} msg={self}", self.exit_code())
    }
}
