use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    IndexOutOfRange { index: usize, num_nodes: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("resonant eigenvalue pair ({i}, {j}): denominator {denominator:e}")]
    Resonance { i: usize, j: usize, denominator: f64 },

    #[error("non-finite state at t = {t} (step {step})")]
    NonFinite { t: f64, step: usize },

    #[error("solver exceeded {0} steps")]
    MaxSteps(usize),

    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("empty node mask")]
    EmptyMask,

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

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

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures caused by the numerics (divergence, NaN, step
    /// exhaustion) rather than by invalid input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::MaxSteps(_) | Error::NonFiniteLoss(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
