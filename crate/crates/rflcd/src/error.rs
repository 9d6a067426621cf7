use std::path::{Path, PathBuf};

/// Errors of the file-facing layer. [`Error::exit_code`] maps them onto the
/// CLI contract: 1 for usage and configuration problems, 2 for failures at
/// run time.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("{path}: malformed checkpoint: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("checkpoint does not match the configuration: {}", .0.join("; "))]
    ConfigMismatch(Vec<String>),
    #[error("{0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Core(#[from] rflcd_core::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Config(_)
            | Error::ConfigMismatch(_)
            | Error::Core(rflcd_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
