//! Downstream evaluation: ranking metrics for link prediction, K-means with
//! matching-based accuracy / NMI / ARI, and a logistic-regression head.

pub mod classify;
pub mod cluster;
pub mod ranking;

pub use classify::{accuracy, fit_logistic, logistic_head, HeadOutcome, LogisticConfig, LogisticModel};
pub use cluster::{clustering_metrics, kmeans, ClusteringScores, KMeansConfig, KMeansResult};
pub use ranking::{auc, average_precision};
