use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid term dictionary: {0}")]
    Dictionary(String),

    #[error("term {term:?} is claimed by both class {first} and class {second}")]
    DuplicateTerm { term: String, first: u32, second: u32 },

    #[error("invalid label set: {0}")]
    LabelSet(String),

    #[error("class id {0} is not in the label set")]
    UnknownClass(u32),

    #[error("cannot partition {classes} classes into {parts} parts")]
    Partition { classes: usize, parts: usize },

    #[error("prediction for sample {0:?} is argmax-only and cannot be remapped onto a reduced label set")]
    UnsupportedRemap(String),

    #[error("invalid prediction for sample {sample}: {reason}")]
    Prediction { sample: String, reason: String },

    #[error("label set mismatch: predictions over {predictions:?} have no remap path onto {target:?}")]
    LabelSetMismatch { predictions: String, target: String },

    #[error("duplicate prediction for sample {0:?}")]
    DuplicatePrediction(String),

    #[error("{count} evaluation samples have no prediction (first: {first:?})")]
    MissingPredictions { count: usize, first: String },

    #[error("invalid evaluation set: {0}")]
    EvalSet(String),

    #[error("invalid report input: {0}")]
    Report(String),

    #[error("{0} requires at least one input value")]
    EmptyInput(&'static str),

    #[error("invalid bin spec: {0}")]
    BinSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
