use serde::{Deserialize, Serialize};

use super::{Matrix, ShapeError};

/// Ordered, named list of matrices. The unit of model exchange between
/// learners and the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<(String, Matrix)>,
}

/// Gradients share the layout of the parameters they belong to.
pub type GradientSet = ParameterSet;

impl ParameterSet {
    pub fn new(entries: Vec<(String, Matrix)>) -> Result<Self, ShapeError> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(other, _)| other == name) {
                return Err(ShapeError::DuplicateName(name.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// A zero-valued set with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all matrices.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn entry(&self, index: usize) -> &Matrix {
        &self.entries[index].1
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(Matrix::is_finite)
    }

    /// Same names, same order, same shapes.
    pub fn is_congruent(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((n1, m1), (n2, m2))| n1 == n2 && m1.shape() == m2.shape())
    }

    pub fn check_congruent(&self, other: &ParameterSet) -> Result<(), ShapeError> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(ShapeError::Incongruent)
        }
    }

    /// Returns `self + alpha * src`.
    pub fn scale_add(&self, src: &ParameterSet, alpha: f64) -> Result<ParameterSet, ShapeError> {
        let mut out = self.clone();
        out.scale_add_assign(src, alpha)?;
        Ok(out)
    }

    /// In-place `self += alpha * src`.
    pub fn scale_add_assign(&mut self, src: &ParameterSet, alpha: f64) -> Result<(), ShapeError> {
        self.check_congruent(src)?;
        for (dst, src) in self.matrices_mut().zip(src.matrices()) {
            for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
                *d += alpha * s;
            }
        }
        Ok(())
    }

    /// In-place multiplication of every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for m in self.matrices_mut() {
            for v in m.values_mut() {
                *v *= factor;
            }
        }
    }

    /// Flattened copy of every entry in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for m in self.matrices() {
            out.extend_from_slice(m.values());
        }
        out
    }

    /// Mutable access by position in [`flatten`](Self::flatten) order.
    pub fn value_mut(&mut self, flat_index: usize) -> &mut f64 {
        let mut idx = flat_index;
        for m in self.matrices_mut() {
            if idx < m.len() {
                return &mut m.values_mut()[idx];
            }
            idx -= m.len();
        }
        panic!("flat index {flat_index} out of range");
    }

    /// Largest entrywise difference, relative to `max(1, |other|)`.
    pub fn max_relative_diff(&self, other: &ParameterSet) -> Result<f64, ShapeError> {
        self.check_congruent(other)?;
        let mut worst = 0.0f64;
        for (a, b) in self.matrices().zip(other.matrices()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                worst = worst.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(values: &[f64]) -> ParameterSet {
        ParameterSet::new(vec![
            ("a".into(), Matrix::from_vec(1, 2, values[..2].to_vec()).unwrap()),
            ("b".into(), Matrix::from_vec(1, 1, values[2..3].to_vec()).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn duplicate_names_rejected() {
        let m = Matrix::zeros(1, 1);
        let err = ParameterSet::new(vec![("w".into(), m.clone()), ("w".into(), m)]);
        assert!(matches!(err, Err(ShapeError::DuplicateName(_))));
    }

    #[test]
    fn scale_add_zero_alpha_is_identity() {
        let dst = set(&[1.0, 2.0, 3.0]);
        let src = set(&[5.0, 6.0, 7.0]);
        assert_eq!(dst.scale_add(&src, 0.0).unwrap(), dst);
    }

    #[test]
    fn scale_add_inverse() {
        let z = set(&[0.0, 0.0, 0.0]);
        let w = set(&[0.3, -1.7, 2.9]);
        let p = 0.37;
        let back = z.scale_add(&w, p).unwrap().scale_add(&w, -p).unwrap();
        for (x, y) in back.flatten().iter().zip(z.flatten()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn weighted_sum_matches_direct_sum() {
        let models = [set(&[1.0, 2.0, 3.0]), set(&[-1.0, 0.5, 4.0]), set(&[0.25, 0.0, -2.0])];
        let weights = [0.5, 0.3, 0.2];
        let mut acc = models[0].zeros_like();
        for (m, p) in models.iter().zip(weights) {
            acc = acc.scale_add(m, p).unwrap();
        }
        for i in 0..3 {
            let direct: f64 = models.iter().zip(weights).map(|(m, p)| p * m.flatten()[i]).sum();
            assert!((acc.flatten()[i] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn incongruent_sets_rejected() {
        let a = set(&[1.0, 2.0, 3.0]);
        let b = ParameterSet::new(vec![("a".into(), Matrix::zeros(2, 1))]).unwrap();
        assert_eq!(a.scale_add(&b, 1.0), Err(ShapeError::Incongruent));
    }
}
