use std::path::PathBuf;

use hop_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = HopError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HopError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("audio file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("audio file {0} holds no samples")]
    EmptyAudio(PathBuf),
    #[error("embedding header: {0}")]
    EmbeddingHeader(String),
    #[error("embedding file declares {declared} rows but line {line} {problem}")]
    EmbeddingRows {
        declared: usize,
        line: usize,
        problem: String,
    },
    #[error("embedding file line {line}: {value:?} is not a number")]
    EmbeddingValue { line: usize, value: String },
    #[error("invalid parameter for {op}: {msg}")]
    Param { op: &'static str, msg: String },
    #[error("unknown speaker id {id} (have {count})")]
    UnknownSpeaker { id: usize, count: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HopError {
    pub fn param(op: &'static str, msg: impl Into<String>) -> Self {
        HopError::Param {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HopError::Io {
            path: path.into(),
            source,
        }
    }

    /// Name of the op that produced a NaN or infinity, if that is the cause.
    pub fn non_finite_op(&self) -> Option<&'static str> {
        match self {
            HopError::Tensor(TensorError::NonFinite { op }) => Some(op),
            _ => None,
        }
    }
}
