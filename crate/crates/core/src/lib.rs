//! Teacher-free graph self-distillation.
//!
//! A plain MLP node classifier is trained with two self-distillation signals
//! derived from the graph: a feature-level term that pulls each node's
//! prediction toward learned interpolations with its neighbors and pushes it
//! away from sampled non-neighbors, and a label-level term that supervises the
//! neighbors of labeled nodes with those labels. Inference reads node features
//! only. The crate also ships a GCN baseline with instrumented single-node
//! inference, a benchmark harness, and the evaluation probes.

pub mod bench;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod layers;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod sparse;
pub mod synthetic;
pub mod trainer;

pub use error::{DatasetError, Result, TgsError};
pub use graph::{Csr, GraphStore, NodeId, SplitMasks};
pub use matrix::DenseMatrix;
pub use model::TgsParams;
pub use trainer::{RunReport, TrainConfig};
