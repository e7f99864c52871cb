use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every layer of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value {value} at {what}[{index}]")]
    NonFinite {
        what: String,
        index: usize,
        value: f64,
    },

    #[error("unsupported scale factor {0}")]
    UnsupportedScale(f64),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("empty valid-pixel set")]
    EmptyMask,

    #[error("overlapping index ranges: {0}")]
    OverlappingRanges(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("ingest failed for {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::NonFinite { .. } => "non_finite",
            Error::UnsupportedScale(_) => "unsupported_scale",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::EmptyMask => "empty_mask",
            Error::OverlappingRanges(_) => "overlapping_ranges",
            Error::Format { .. } => "format",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::MissingParam(_) => "missing_param",
            Error::Diverged { .. } => "diverged",
            Error::Ingest { .. } => "ingest",
            Error::Unknown { .. } => "unknown",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
