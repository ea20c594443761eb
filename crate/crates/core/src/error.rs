use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),

    #[error("non-finite input value {0}")]
    NonFinite(f64),

    #[error("bit index {bit} out of range for a {width}-bit code")]
    BitOutOfRange { bit: u32, width: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("zero-norm direction vector")]
    ZeroDirection,

    #[error("distribution is not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported construct: {0}")]
    Unsupported(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },

    #[error("address space of {size} bits exceeds the exhaustive-scan guard of {limit}; use a sampled scan")]
    ScanGuard { size: usize, limit: usize },

    #[error("invalid config: unknown keys [{}]", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("transport solver did not converge after {0} pivots")]
    SolverStalled(usize),

    #[error("compiler or harness failure: {0}")]
    Toolchain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
