use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed IPC code {code:?}: {reason}")]
    MalformedIpc { code: String, reason: &'static str },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing column {0:?} in CSV header")]
    MissingColumn(String),

    #[error("cannot decode input as {encoding}: {detail}")]
    Decode { encoding: &'static str, detail: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("variable is not recorded on this tape")]
    NotOnTape,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("requested {requested} top layers but the encoder only has {available}")]
    NotEnoughLayers { requested: usize, available: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("section {0} has no training samples")]
    MissingSectionData(char),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("label {0:?} is not in the taxonomy")]
    UnknownLabel(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by the run configuration rather than the data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::NotEnoughLayers { .. }
        )
    }
}
