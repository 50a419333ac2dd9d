//! Barlow graph auto-encoders.
//!
//! Two views of a graph, the normalized adjacency and a personalized
//! PageRank diffusion matrix, are encoded by one shared GCN layer, fused,
//! and decoded into edge probabilities. Training combines a dual
//! reconstruction loss with a redundancy-reducing cross-covariance loss.
//! The [`eval`] module scores embeddings on link prediction, clustering
//! and node classification.

pub mod autodiff;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod training;

pub use diffusion::{DiffusionConfig, DiffusionMatrix, DiffusionMethod, Kernel, Sparsification};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, MetricsReport, Task};
pub use graph::{load_bundle, save_bundle, DatasetBundle, Edge, EdgeSplit, NormalizedAdjacency};
pub use losses::{DiffusionTargets, LossConfig};
pub use model::{FusionMode, Model, Variant};
pub use optim::AdamConfig;
pub use training::{RunState, TrainConfig};
