//! Dataset ingestion, synthetic data and federated partitioning.

mod blobs;
mod dataset;
pub mod idx;
mod partition;

use thiserror::Error;

pub use blobs::{blob_centers, generate_blobs, generate_blobs_test};
pub use dataset::{ClassHistogram, Dataset};
pub use idx::load_idx;
pub use partition::{
    alternating_order, assign_classes, compute_sizes, stratified_split, stratified_split_indices, validation_count,
    ClassAssignment, ClassSpec, FederatedSplit, LearnerData, SizeDistribution, NON_IID_PRESETS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{field}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        field: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("{field}: truncated file, need {needed} bytes but only {available} present")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{field}: {detail}")]
    Format { field: &'static str, detail: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("infeasible distribution: {0}")]
    Infeasible(String),
    #[error("insufficient class supply: {0}")]
    Capacity(String),
    #[error("empty {0}")]
    Empty(&'static str),
}
