//! Error type shared by all simulator modules.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A device shard would end up with an empty (or too small) split.
    #[error("degenerate shard: {0}")]
    DegenerateShard(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A proximal coefficient was given without the anchor parameters.
    #[error("proximal anchor required when prox_mu = {0} > 0")]
    MissingAnchor(f64),

    #[error("empty input: {0}")]
    Empty(String),

    /// A NaN or infinity showed up during training.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid selection probabilities: {0}")]
    InvalidProbability(String),

    #[error("invalid client count: {0}")]
    InvalidClientCount(String),

    #[error("parse error at line {line}: {msg}")]
    CsvParse { line: u64, msg: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown device column `{0}`")]
    UnknownDeviceColumn(String),

    /// An error raised while training a specific client.
    #[error("client {id}: {source}")]
    Client {
        id: usize,
        #[source]
        source: Box<FedError>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl FedError {
    /// Unwraps `Client` wrappers down to the root cause.
    pub fn root_cause(&self) -> &FedError {
        match self {
            FedError::Client { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
