use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("corrupt checkpoint {}: {msg}", path.display())]
    CorruptCheckpoint { path: PathBuf, msg: String },

    #[error("checkpoint does not match the run: {0}")]
    ConfigMismatch(String),

    #[error("{0}")]
    Threshold(String),

    #[error(transparent)]
    Core(#[from] vcore_core::Error),
}

impl Error {
    /// 2 usage, 3 I/O or file format, 4 numeric failure or threshold.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::ConfigMismatch(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::CorruptCheckpoint { .. } => 3,
            Error::Threshold(_) => 4,
            Error::Core(vcore_core::Error::NonFinite(_)) => 4,
            Error::Core(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, msg: impl std::fmt::Display) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}
