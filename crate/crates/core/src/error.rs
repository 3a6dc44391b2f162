use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called before forward evaluation")]
    BackwardBeforeForward,

    #[error("clip too short: {samples} samples, need at least {needed}")]
    ClipTooShort { samples: usize, needed: usize },

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),

    #[error("input too short for conv stack: {frames} frames collapse to zero at layer {layer}")]
    InputTooShort { frames: usize, layer: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("class {class} has {count} samples, need at least {needed}")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("wav format: {path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("manifest row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },

    #[error("manifest row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("bad container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
