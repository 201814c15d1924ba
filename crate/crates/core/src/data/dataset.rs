use serde::Serialize;

use super::DataError;
use crate::nn::{Batch, Matrix};

/// Features (`n x d`) with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::Format {
                field: "labels",
                detail: format!("{} rows but {} labels", features.rows(), labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Format {
                field: "labels",
                detail: format!("label {bad} outside [0, {num_classes})"),
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn class_histogram(&self) -> ClassHistogram {
        ClassHistogram::of(&self.labels, self.num_classes)
    }

    /// Row indices per class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassHistogram(pub Vec<usize>);

impl ClassHistogram {
    pub fn of(labels: &[usize], num_classes: usize) -> Self {
        let mut counts = vec![0; num_classes];
        for &l in labels {
            counts[l] += 1;
        }
        Self(counts)
    }

    pub fn present_classes(&self) -> usize {
        self.0.iter().filter(|&&c| c > 0).count()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}
