use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame has no foreground pixels")]
    EmptyForeground,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid downsample target {target:?} for a {source_dims:?} mask")]
    InvalidTarget {
        target: (usize, usize),
        source_dims: (usize, usize),
    },
    #[error("feature height {0} is too small to split into quarter/half/quarter strips")]
    HeightTooSmall(usize),
    #[error("pyramid scale {scale} does not divide feature height {height}")]
    ScaleError { scale: usize, height: usize },
    #[error("invalid label {0} (expected 0..=11)")]
    InvalidLabel(u8),
    #[error("degenerate walker geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid render spec: {0}")]
    InvalidSpec(String),
    #[error("dataset layout error: {0}")]
    Layout(String),
    #[error("sil/par frame counts differ for: {}", .0.join(", "))]
    ModalityMismatch(Vec<String>),
    #[error("need {requested} subjects but only {available} are available")]
    InsufficientSubjects { requested: usize, available: usize },
    #[error("batch contains a single class; triplet loss needs at least two")]
    DegenerateBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("embedding dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("no query has a relevant gallery item")]
    NoValidQueries,
    #[error("split error: {0}")]
    Split(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config fingerprint {found} does not match checkpoint fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png error on {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 4,
            Error::Config(_) | Error::FingerprintMismatch { .. } => 2,
            _ => 3,
        }
    }
}
