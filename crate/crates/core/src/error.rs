use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("frame {position} out of range for sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("actions cover {covered} frames but the sequence has {len}")]
    ActionsTooShort { covered: usize, len: usize },

    #[error("invalid step length {0}")]
    InvalidStep(usize),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("sequence has no ground-truth labels")]
    MissingLabels,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("search error: {0}")]
    Search(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("label {label} at frame {frame} out of range for {num_classes} classes")]
    LabelOutOfRange {
        label: usize,
        frame: usize,
        num_classes: usize,
    },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unknown model kind {0:?}")]
    UnknownModelKind(String),

    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongModelKind { found: String, expected: String },

    #[error("shape mismatch for {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },

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
