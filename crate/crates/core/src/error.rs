use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: malformed IDX data at byte offset {offset}: {detail}")]
    Idx {
        path: PathBuf,
        offset: usize,
        detail: String,
    },

    #[error("{path}: line {line}: {detail}")]
    TextParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed checkpoint: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("checkpoint fingerprint {found} does not match configuration fingerprint {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, step {step}; last good parameters saved to {checkpoint}")]
    NonFinite {
        epoch: usize,
        step: usize,
        checkpoint: PathBuf,
    },

    #[error("missing runs for presets: {}", .0.join(", "))]
    MissingRuns(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("png encoding failed for {path}: {detail}")]
    Png { path: PathBuf, detail: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::InvalidArgument(_) | Error::Config(_) => "config",
            Error::Idx { .. } | Error::TextParse { .. } => "data",
            Error::Io { .. } | Error::Png { .. } | Error::Csv(_) => "io",
            Error::Checkpoint { .. } | Error::Fingerprint { .. } => "checkpoint",
            Error::NonFinite { .. } => "numeric",
            Error::MissingRuns(_) => "missing-runs",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "data" => 3,
            "io" => 4,
            "checkpoint" => 5,
            "numeric" => 6,
            "missing-runs" => 7,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
