use serde::{Deserialize, Serialize};

use super::{logits, Matrix, ParameterSet, ShapeError};

/// `C x C` counts, rows are actual labels and columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, ShapeError> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(ShapeError::InvalidSpec("confusion matrix must be square".into()));
        }
        Ok(Self {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.num_classes + predicted]
    }

    #[inline]
    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.num_classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Elementwise sum.
    pub fn add_assign(&mut self, other: &ConfusionMatrix) -> Result<(), ShapeError> {
        if other.num_classes != self.num_classes {
            return Err(ShapeError::Mismatch {
                context: "confusion pooling",
                left: (self.num_classes, self.num_classes),
                right: (other.num_classes, other.num_classes),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Fraction of samples on the diagonal.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ParameterSet, features: &Matrix) -> Result<Vec<usize>, ShapeError> {
    let z = logits(params, features)?;
    Ok((0..z.rows()).map(|r| argmax(z.row(r))).collect())
}

pub fn evaluate_confusion(
    params: &ParameterSet,
    features: &Matrix,
    labels: &[usize],
) -> Result<ConfusionMatrix, ShapeError> {
    if labels.is_empty() {
        return Err(ShapeError::EmptyEvaluation);
    }
    if features.rows() != labels.len() {
        return Err(ShapeError::Length {
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    let z = logits(params, features)?;
    let c = z.cols();
    let mut cm = ConfusionMatrix::new(c);
    for (r, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(ShapeError::LabelOutOfRange { label, num_classes: c });
        }
        cm.record(label, argmax(z.row(r)));
    }
    Ok(cm)
}
