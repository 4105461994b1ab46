use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] pvp_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("I/O error at byte {offset}: {source}")]
    Write { offset: u64, source: std::io::Error },
    #[error("record at byte {offset}: {reason}")]
    Integrity { offset: u64, reason: String },
    #[error("offset {offset} outside data of {len} bytes")]
    Range { offset: u64, len: u64 },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command line: 2 for bad input, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } => 2,
            Error::Core(pvp_core::Error::Config(_)) | Error::Core(pvp_core::Error::Domain(_)) => 2,
            Error::Io { .. } | Error::Write { .. } | Error::Integrity { .. } | Error::Range { .. } => 3,
            Error::Core(_) => 1,
        }
    }
}
