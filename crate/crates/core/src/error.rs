use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("code point U+{0:04X} is not present in the font")]
    MissingGlyph(u32),

    #[error("unreadable font {path}: {reason}")]
    UnreadableFont { path: PathBuf, reason: String },

    #[error("resolution mismatch: expected {expected:?}, got {actual:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{field} id {id} out of bounds for vocabulary of size {size}")]
    IdOutOfBounds { field: &'static str, id: usize, size: usize },

    #[error("unknown {field} name {name:?}")]
    UnknownName { field: &'static str, name: String },

    #[error("step {t} outside [1, {max}]")]
    StepOutOfRange { t: usize, max: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("rendering {character:?} with {font}: {source}")]
    Render {
        character: char,
        font: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint truncated while reading {0}")]
    TruncatedCheckpoint(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("survey error: {0}")]
    Survey(String),

    #[error("image decode error in {path}: {reason}")]
    ImageDecode { path: String, reason: String },

    #[error("I/O error on {path}: {source}")]
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
