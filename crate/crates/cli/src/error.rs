use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] umri::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Malformed {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn csv(path: &Path, err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(source) => CliError::io(path, source),
            other => CliError::malformed(path, format!("{other:?}")),
        }
    }

    /// 2 for configuration errors, 4 for I/O and file format errors, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(umri::Error::InvalidConfig(_)) => 2,
            CliError::Io { .. } | CliError::Malformed { .. } => 4,
            CliError::Core(umri::Error::Io { .. } | umri::Error::Format { .. }) => 4,
            CliError::Core(_) | CliError::Runtime(_) => 3,
        }
    }
}

impl From<&CliError> for ExitCode {
    fn from(e: &CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
