//! Root cause clusters: heatmap distance matrices, average-linkage
//! agglomerative clustering, knee-based choice of the cluster count, best
//! layer selection and the parameter variance-reduction report.

mod distance;
mod hac;
mod kneedle;
mod report;
mod select;

pub use distance::{distance_matrix, distance_matrix_sequential, euclidean, DistanceMatrix};
pub use hac::{cut, hac_average_linkage, Dendrogram, Merge};
pub use kneedle::{kneedle, Knee};
pub use report::{
    inspection_ratio, variance_reduction_report, ParamTable, VarianceReport, VarianceRow, HIGH_REDUCTION,
};
pub use select::{
    build_clusters, layer_score, select_best_layer, select_clusters, wicd, ClusteringResult, RootCauseCluster,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("heatmap length mismatch: {a} has {len_a} values, {b} has {len_b}")]
    LengthMismatch {
        a: String,
        b: String,
        len_a: usize,
        len_b: usize,
    },
    #[error("non-finite value in heatmap {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;
