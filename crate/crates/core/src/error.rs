use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CpmError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("receptive field target {target} is infeasible; best achievable is {best}")]
    InfeasibleTarget { target: usize, best: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("architecture fingerprint mismatch: checkpoint has {found}, spec has {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("parameter counts drift more than 10% across the family: {counts:?}")]
    UnbalancedFamily { counts: Vec<usize> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Png(#[from] png::EncodingError),
}

pub type Result<T, E = CpmError> = std::result::Result<T, E>;

impl CpmError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CpmError::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CpmError::Io { path: path.into(), source }
    }
}
