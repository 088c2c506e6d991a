use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fedboost_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: row {row}, column {column}: {message}")]
    Cell { path: PathBuf, row: usize, column: String, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Format { path: path.into(), message: message.to_string() }
    }

    /// Process exit code: 1 usage, 2 data or runtime, 3 infeasible configuration.
    pub fn exit_code(&self) -> i32 {
        use fedboost_core::Error as C;
        match self {
            Error::Usage(_) | Error::Core(C::InvalidArgument(_)) => 1,
            Error::Core(C::AnonymityUnsatisfiable { .. } | C::WorkerCount { .. } | C::PartitionCounts { .. }) => 3,
            _ => 2,
        }
    }
}
