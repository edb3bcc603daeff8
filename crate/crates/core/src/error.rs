use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("{op}: index {index} out of range for length {len}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{op}: value {value} outside the domain (guard {guard})")]
    Domain { op: &'static str, value: f64, guard: f64 },

    #[error("backward: {0}")]
    Backward(String),

    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("curvature must be negative, got {0}")]
    Curvature(f64),

    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),

    #[error("point is not on the hyperboloid: residual {residual:e} exceeds {tol:e}")]
    NotOnManifold { residual: f64, tol: f64 },

    #[error("vector is not tangent: |<v, x>_L| = {residual:e} exceeds {tol:e}")]
    NotTangent { residual: f64, tol: f64 },

    #[error("{0}")]
    EmptyBatch(&'static str),

    #[error("model: {0}")]
    Model(String),

    #[error("config: {0}")]
    Config(String),

    #[error("idx {path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    IdxMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("idx {path}: file truncated, expected {expected} bytes of payload, found {found}")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("idx: image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("dataset not found: {0}")]
    DatasetMissing(PathBuf),

    #[error("checkpoint: unsupported version {found}, this build reads {supported}")]
    CheckpointVersion { found: String, supported: String },

    #[error("checkpoint: checksum mismatch, payload is corrupt")]
    CheckpointChecksum,

    #[error("checkpoint: architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("checkpoint: malformed payload: {0}")]
    CheckpointFormat(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V, E = Error> = std::result::Result<V, E>;
