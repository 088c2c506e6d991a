use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid label {value} at row {row}")]
    InvalidLabel { row: usize, value: f64 },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("partition counts {got} do not sum to {expected} rows")]
    PartitionCounts { expected: usize, got: usize },
    #[error("invalid worker count {workers} for {rows} rows")]
    WorkerCount { workers: usize, rows: usize },
    #[error("anonymity unsatisfiable: {bins} bins x k={k} exceeds {values} values")]
    AnonymityUnsatisfiable { bins: usize, k: u64, values: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("H + lambda must be positive (got {0})")]
    DegenerateHessian(f64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("frame truncated")]
    Truncated,
    #[error("unsupported protocol version {0}")]
    UnknownVersion(u16),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("layout mismatch: model was trained with {expected}, shards use {found}")]
    LayoutMismatch { expected: String, found: String },
    #[error("transport: {0}")]
    Transport(String),
}
