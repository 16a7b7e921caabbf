use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at lead {lead}, sample {sample}")]
    NonFiniteValues { lead: usize, sample: usize },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("output index {index} out of range for {num_outputs} outputs")]
    OutputIdxOutOfRange { index: usize, num_outputs: usize },

    #[error("unknown layer `{name}` (registered: {known})")]
    UnknownLayer { name: String, known: String },

    #[error("layer `{0}` does not produce a (channels, positions) activation map")]
    LayerRankMismatch(String),

    #[error("model forward failed: {0}")]
    ModelForward(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("loss became non-finite during {0}")]
    NonFiniteLoss(&'static str),

    #[error("activations at layer `{0}` have zero variance; cannot fit a concept classifier")]
    DegenerateActivations(String),

    #[error("random pool has {available} records, need at least {required}")]
    InsufficientRandomPool { available: usize, required: usize },

    #[error("grid mismatch: {leads} leads cannot be laid out in {columns} columns")]
    GridMismatch { leads: usize, columns: usize },

    #[error("lead index {index} out of range for {leads} leads")]
    LeadOutOfRange { index: usize, leads: usize },

    #[error("nothing to plot: {0}")]
    EmptyResults(&'static str),

    #[error("training diverged at epoch {0} (loss is NaN)")]
    TrainingDivergence(usize),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
