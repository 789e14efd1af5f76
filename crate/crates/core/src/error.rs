use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: output extent is not integral (input {input}, kernel {kernel}, stride {stride}, pad {pad})")]
    NonIntegralExtent {
        op: &'static str,
        input: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unsupported input size {0}")]
    UnsupportedInputSize(usize),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("{path}: line {line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },

    #[error("unknown class ({crop}, {disease})")]
    UnknownClass { crop: String, disease: String },

    #[error("unknown crop `{0}`")]
    UnknownCrop(String),

    #[error("invalid {field} `{token}` in config string")]
    Config { field: &'static str, token: String },

    #[error("epoch {epoch} out of range (total {total})")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("empty confusion matrix")]
    EmptyMatrix,

    #[error("empty restriction: no crop has at least {0} classes")]
    EmptyRestriction(usize),

    #[error("no logs to aggregate")]
    EmptyLogs,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used by the CLI for its machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonIntegralExtent { .. } => "non_integral_extent",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::UnknownLayer(_) => "unknown_layer",
            Error::UnsupportedInputSize(_) => "unsupported_input_size",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Manifest { .. } => "manifest",
            Error::UnknownClass { .. } => "unknown_class",
            Error::UnknownCrop(_) => "unknown_crop",
            Error::Config { .. } => "config",
            Error::EpochOutOfRange { .. } => "epoch_out_of_range",
            Error::EmptyMatrix => "empty_matrix",
            Error::EmptyRestriction(_) => "empty_restriction",
            Error::EmptyLogs => "empty_logs",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Image { .. } => "image",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
