use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GradientSet, Matrix, ParameterSet, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxRegression,
    /// One hidden tanh layer.
    Mlp1Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn softmax(input_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        Self {
            kind: ModelKind::SoftmaxRegression,
            input_dim,
            hidden_dim: 0,
            num_classes,
            init_seed,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        Self {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            hidden_dim,
            num_classes,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let ok = self.num_classes >= 2
            && self.input_dim >= 1
            && match self.kind {
                ModelKind::SoftmaxRegression => true,
                ModelKind::Mlp1Hidden => self.hidden_dim >= 1,
            };
        if ok {
            Ok(())
        } else {
            Err(ShapeError::InvalidSpec(format!("{self:?}")))
        }
    }
}

/// A mini batch of `β` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self, ShapeError> {
        if features.rows() != labels.len() {
            return Err(ShapeError::Length {
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Glorot-uniform weights, zero biases. Each matrix draws from its own
/// ChaCha stream keyed by `init_seed`, so the result depends only on the spec.
pub fn init_parameters(spec: &ModelSpec) -> ParameterSet {
    let layers: Vec<(&str, &str, usize, usize)> = match spec.kind {
        ModelKind::SoftmaxRegression => vec![("W", "b", spec.input_dim, spec.num_classes)],
        ModelKind::Mlp1Hidden => vec![
            ("W1", "b1", spec.input_dim, spec.hidden_dim),
            ("W2", "b2", spec.hidden_dim, spec.num_classes),
        ],
    };
    let mut entries = Vec::with_capacity(layers.len() * 2);
    for (stream, (w_name, b_name, fan_in, fan_out)) in layers.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        rng.set_stream(stream as u64);
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| rng.random_range(-r..r)).collect();
        let weights = Matrix::from_vec(fan_in, fan_out, values).expect("sized by construction");
        entries.push((w_name.to_string(), weights));
        entries.push((b_name.to_string(), Matrix::zeros(1, fan_out)));
    }
    ParameterSet::new(entries).expect("fixed unique names")
}

enum Arch<'a> {
    Softmax {
        w: &'a Matrix,
        b: &'a Matrix,
    },
    Mlp {
        w1: &'a Matrix,
        b1: &'a Matrix,
        w2: &'a Matrix,
        b2: &'a Matrix,
    },
}

fn arch(params: &ParameterSet) -> Result<Arch<'_>, ShapeError> {
    let names: Vec<&str> = params.names().collect();
    match names.as_slice() {
        ["W", "b"] => Ok(Arch::Softmax {
            w: params.entry(0),
            b: params.entry(1),
        }),
        ["W1", "b1", "W2", "b2"] => Ok(Arch::Mlp {
            w1: params.entry(0),
            b1: params.entry(1),
            w2: params.entry(2),
            b2: params.entry(3),
        }),
        _ => Err(ShapeError::UnknownLayout(names.iter().map(|s| s.to_string()).collect())),
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix, ShapeError> {
    let mut z = x.matmul(w)?;
    z.add_row_broadcast(b)?;
    Ok(z)
}

fn tanh_in_place(m: &mut Matrix) {
    for v in m.values_mut() {
        *v = v.tanh();
    }
}

/// Raw class scores for every row of `features`.
pub fn logits(params: &ParameterSet, features: &Matrix) -> Result<Matrix, ShapeError> {
    match arch(params)? {
        Arch::Softmax { w, b } => affine(features, w, b),
        Arch::Mlp { w1, b1, w2, b2 } => {
            let mut h = affine(features, w1, b1)?;
            tanh_in_place(&mut h);
            affine(&h, w2, b2)
        }
    }
}

/// Row-wise softmax, written into `m`.
fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<(), ShapeError> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(ShapeError::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

/// Mean cross-entropy of the batch, along with the logits.
pub fn forward_loss(params: &ParameterSet, batch: &Batch) -> Result<(f64, Matrix), ShapeError> {
    if batch.is_empty() {
        return Err(ShapeError::EmptyBatch);
    }
    let z = logits(params, &batch.features)?;
    check_labels(&batch.labels, z.cols())?;
    let mut total = 0.0;
    for (r, &label) in batch.labels.iter().enumerate() {
        let row = z.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok((total / batch.len() as f64, z))
}

/// Gradient of [`forward_loss`] with respect to every parameter entry.
pub fn backward(params: &ParameterSet, batch: &Batch) -> Result<GradientSet, ShapeError> {
    if batch.is_empty() {
        return Err(ShapeError::EmptyBatch);
    }
    let n = batch.len() as f64;
    // dL/dz = (softmax(z) - onehot) / n
    let output_grad = |z: &mut Matrix| -> Result<(), ShapeError> {
        check_labels(&batch.labels, z.cols())?;
        softmax_rows(z);
        for (r, &label) in batch.labels.iter().enumerate() {
            let row = z.row_mut(r);
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Ok(())
    };

    let entries = match arch(params)? {
        Arch::Softmax { w, b } => {
            let mut dz = affine(&batch.features, w, b)?;
            output_grad(&mut dz)?;
            vec![
                ("W".to_string(), batch.features.t_matmul(&dz)?),
                ("b".to_string(), dz.sum_rows()),
            ]
        }
        Arch::Mlp { w1, b1, w2, b2 } => {
            let mut h = affine(&batch.features, w1, b1)?;
            tanh_in_place(&mut h);
            let mut dz2 = affine(&h, w2, b2)?;
            output_grad(&mut dz2)?;
            let mut dz1 = dz2.matmul_t(w2)?;
            for (g, a) in dz1.values_mut().iter_mut().zip(h.values()) {
                *g *= 1.0 - a * a;
            }
            vec![
                ("W1".to_string(), batch.features.t_matmul(&dz1)?),
                ("b1".to_string(), dz1.sum_rows()),
                ("W2".to_string(), h.t_matmul(&dz2)?),
                ("b2".to_string(), dz2.sum_rows()),
            ]
        }
    };
    ParameterSet::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::softmax(4, 3, 1990);
        assert_eq!(init_parameters(&spec), init_parameters(&spec));
        let other = ModelSpec::softmax(4, 3, 1991);
        assert_ne!(init_parameters(&spec), init_parameters(&other));
    }

    #[test]
    fn mlp_layout() {
        let params = init_parameters(&ModelSpec::mlp(4, 16, 3, 1990));
        let shapes: Vec<(&str, (usize, usize))> = params.iter().map(|(n, m)| (n, m.shape())).collect();
        assert_eq!(
            shapes,
            vec![("W1", (4, 16)), ("b1", (1, 16)), ("W2", (16, 3)), ("b2", (1, 3))]
        );
    }

    #[test]
    fn init_within_glorot_bound() {
        let params = init_parameters(&ModelSpec::softmax(10, 5, 7));
        let r = (6.0f64 / 15.0).sqrt();
        assert!(params.entry(0).values().iter().all(|v| v.abs() < r));
        assert!(params.entry(1).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_spec() {
        assert!(ModelSpec::softmax(4, 1, 0).validate().is_err());
        assert!(ModelSpec::softmax(0, 2, 0).validate().is_err());
        assert!(ModelSpec::mlp(4, 0, 3, 0).validate().is_err());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let params = ParameterSet::new(vec![
            ("W".into(), Matrix::zeros(3, 4)),
            ("b".into(), Matrix::zeros(1, 4)),
        ])
        .unwrap();
        let batch = Batch::new(
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 5.0]]).unwrap(),
            vec![0, 3],
        )
        .unwrap();
        let (loss, _) = forward_loss(&params, &batch).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut last = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 100.0] {
            let params = ParameterSet::new(vec![
                ("W".into(), Matrix::zeros(1, 2)),
                ("b".into(), Matrix::from_vec(1, 2, vec![margin, 0.0]).unwrap()),
            ])
            .unwrap();
            let batch = Batch::new(Matrix::zeros(1, 1), vec![0]).unwrap();
            let (loss, _) = forward_loss(&params, &batch).unwrap();
            assert!(loss >= 0.0 && loss < last);
            last = loss;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn hand_evaluated_loss() {
        // W = [[1, -1], [0.5, 2]], b = [0.1, -0.2]
        let params = ParameterSet::new(vec![
            (
                "W".into(),
                Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap(),
            ),
            ("b".into(), Matrix::from_vec(1, 2, vec![0.1, -0.2]).unwrap()),
        ])
        .unwrap();
        let batch = Batch::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0, 0],
        )
        .unwrap();
        // sample 0: z = [1.1, -1.2]; sample 1: z = [0.6, 1.8]
        let l0 = -(1.1f64.exp() / (1.1f64.exp() + (-1.2f64).exp())).ln();
        let l1 = -(0.6f64.exp() / (0.6f64.exp() + 1.8f64.exp())).ln();
        let (loss, z) = forward_loss(&params, &batch).unwrap();
        assert!((z.get(0, 0) - 1.1).abs() < 1e-15 && (z.get(1, 1) - 1.8).abs() < 1e-15);
        assert!((loss - (l0 + l1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_weight_gradient() {
        let params = init_parameters(&ModelSpec::softmax(3, 4, 11));
        let batch = Batch::new(Matrix::zeros(5, 3), vec![0, 1, 2, 3, 0]).unwrap();
        let g = backward(&params, &batch).unwrap();
        assert!(g.get("W").unwrap().values().iter().all(|&v| v == 0.0));
        assert!(g.get("b").unwrap().values().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let params = init_parameters(&ModelSpec::mlp(2, 3, 3, 5));
        let rows = vec![vec![0.2, -0.4], vec![1.0, 0.3]];
        let once = Batch::new(Matrix::from_rows(&rows).unwrap(), vec![2, 0]).unwrap();
        let mut doubled_rows = rows.clone();
        doubled_rows.extend(rows);
        let twice = Batch::new(Matrix::from_rows(&doubled_rows).unwrap(), vec![2, 0, 2, 0]).unwrap();
        let g1 = backward(&params, &once).unwrap();
        let g2 = backward(&params, &twice).unwrap();
        assert!(g1.max_relative_diff(&g2).unwrap() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let params = init_parameters(&ModelSpec::softmax(3, 2, 0));
        let bad = Batch::new(Matrix::zeros(1, 4), vec![0]).unwrap();
        assert!(forward_loss(&params, &bad).is_err());
        let bad_label = Batch::new(Matrix::zeros(1, 3), vec![2]).unwrap();
        assert!(matches!(
            backward(&params, &bad_label),
            Err(ShapeError::LabelOutOfRange { .. })
        ));
    }
}
