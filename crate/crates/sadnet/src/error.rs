use std::path::{Path, PathBuf};

/// Failures of the command-line tools, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input files.
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }
}

impl From<sadnet_core::Error> for Error {
    fn from(e: sadnet_core::Error) -> Self {
        match e {
            sadnet_core::Error::Config(m) | sadnet_core::Error::Usage(m) => Error::Usage(m),
            sadnet_core::Error::Numeric(m) => Error::Numeric(m),
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
