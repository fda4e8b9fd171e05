use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TgsError> = std::result::Result<T, E>;

/// Problems found while reading a dataset directory.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("node {node} has label {label}, but the dataset declares {classes} classes")]
    LabelOutOfRange { node: usize, label: i64, classes: usize },
    #[error("feature matrix has {found} rows, header declares {expected} nodes")]
    FeatureRowMismatch { expected: usize, found: usize },
    #[error("feature row {row} has {found} values, header declares {expected}")]
    FeatureWidthMismatch { row: usize, expected: usize, found: usize },
    #[error("label file has {found} entries, header declares {expected} nodes")]
    LabelCountMismatch { expected: usize, found: usize },
    #[error("edge on line {line} references node {node}, but the graph has {nodes} nodes")]
    DanglingEdge { line: usize, node: usize, nodes: usize },
    #[error("split file {path} references node {node}, but the graph has {nodes} nodes")]
    DanglingSplitNode { path: PathBuf, node: usize, nodes: usize },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("no features file (expected features.bin or features.csv) in {0}")]
    MissingFeatures(PathBuf),
    #[error("split masks overlap at node {0}")]
    OverlappingSplits(usize),
}

#[derive(Debug, Error)]
pub enum TgsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at ({row}, {col})")]
    NonFinite { what: String, row: usize, col: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward pass for {0} called without a matching training-mode forward")]
    MissingCache(&'static str),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("class {class} has only {available} nodes, {requested} requested")]
    InsufficientClass { class: usize, available: usize, requested: usize },
    #[error("graph has no edges")]
    EmptyEdgeSet,
    #[error("node id {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
