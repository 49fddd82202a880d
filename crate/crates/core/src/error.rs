use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GapError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown node id {id} (dataset has {num_nodes} nodes)")]
    UnknownNode { id: u64, num_nodes: usize },

    #[error("non-finite feature value at node {node}, feature {feature}")]
    NonFiniteFeature { node: usize, feature: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated payload while reading {section}")]
    Truncated { section: &'static str },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-integer order {0} is not supported by this mechanism")]
    NonIntegerOrder(f64),

    #[error("empty alpha grid or no order where every curve is defined")]
    EmptyGrid,

    #[error("cannot compose an empty list of curves")]
    EmptyComposition,

    #[error("target epsilon {target} unreachable for sigma in [{lo:e}, {hi:e}]")]
    CalibrationFailed { target: f64, lo: f64, hi: f64 },

    #[error("degree bound violated: node {node} has degree {degree} > {max_degree}")]
    DegreeBoundViolated {
        node: usize,
        degree: usize,
        max_degree: usize,
    },

    #[error("tape is stale: recorded at parameter version {tape}, model is at {model}")]
    StaleTape { tape: u64, model: u64 },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch normalization is not supported under node-level privacy")]
    BatchNormUnderNodePrivacy,

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("{0}")]
    Audit(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GapError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GapError::Io {
            path: path.into(),
            source,
        }
    }
}
