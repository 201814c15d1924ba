//! Contribution values: FedAvg sample counts, distributed-validation
//! micro-F1 (DVW) and the polynomial-staleness FedAsync mixer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ConfusionMatrix, ParameterSet, ShapeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightingError {
    #[error("evaluation report is empty")]
    EmptyReport,
    #[error("confusion matrices disagree on class count: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error("learner {0} appears twice in the evaluation report")]
    DuplicateEvaluator(usize),
    #[error("score undefined for an empty confusion matrix")]
    UndefinedScore,
    #[error("invalid FedAsync parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// A learner's weight `p_k` in the community mixture.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ContributionValue(pub f64);

impl ContributionValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Aggregation scheme, selected by its config string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "sync_fedavg")]
    SyncFedAvg,
    #[serde(rename = "async_fedavg")]
    AsyncFedAvg,
    #[serde(rename = "sync_dvw")]
    SyncDvw,
    #[serde(rename = "async_dvw")]
    AsyncDvw,
    #[serde(rename = "fedasync_poly")]
    FedAsyncPoly,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::SyncFedAvg,
        Scheme::AsyncFedAvg,
        Scheme::SyncDvw,
        Scheme::AsyncDvw,
        Scheme::FedAsyncPoly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::SyncFedAvg => "sync_fedavg",
            Scheme::AsyncFedAvg => "async_fedavg",
            Scheme::SyncDvw => "sync_dvw",
            Scheme::AsyncDvw => "async_dvw",
            Scheme::FedAsyncPoly => "fedasync_poly",
        }
    }

    pub fn is_sync(self) -> bool {
        matches!(self, Scheme::SyncFedAvg | Scheme::SyncDvw)
    }

    pub fn is_dvw(self) -> bool {
        matches!(self, Scheme::SyncDvw | Scheme::AsyncDvw)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// FedAvg contribution: the local training set size.
pub fn fedavg_weight(train_size: usize) -> ContributionValue {
    ContributionValue(train_size as f64)
}

/// Per-evaluator confusion matrices for one candidate model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_evaluator: Vec<(usize, ConfusionMatrix)>,
}

impl EvalReport {
    pub fn new(per_evaluator: Vec<(usize, ConfusionMatrix)>) -> Result<Self, WeightingError> {
        for (i, (id, _)) in per_evaluator.iter().enumerate() {
            if per_evaluator[..i].iter().any(|(other, _)| other == id) {
                return Err(WeightingError::DuplicateEvaluator(*id));
            }
        }
        Ok(Self { per_evaluator })
    }
}

/// Elementwise sum of every evaluator's counts.
pub fn pool_confusion(report: &EvalReport) -> Result<ConfusionMatrix, WeightingError> {
    let (_, first) = report.per_evaluator.first().ok_or(WeightingError::EmptyReport)?;
    let mut pooled = ConfusionMatrix::new(first.num_classes());
    for (_, cm) in &report.per_evaluator {
        if cm.num_classes() != pooled.num_classes() {
            return Err(WeightingError::ClassMismatch(pooled.num_classes(), cm.num_classes()));
        }
        pooled.add_assign(cm)?;
    }
    Ok(pooled)
}

/// Pooled true positives, false positives and false negatives.
pub fn micro_counts(cm: &ConfusionMatrix) -> (u64, u64, u64) {
    let c = cm.num_classes();
    let tp = cm.trace();
    let fp: u64 = (0..c)
        .map(|j| (0..c).map(|i| cm.get(i, j)).sum::<u64>() - cm.get(j, j))
        .sum();
    let fn_: u64 = (0..c)
        .map(|i| (0..c).map(|j| cm.get(i, j)).sum::<u64>() - cm.get(i, i))
        .sum();
    (tp, fp, fn_)
}

/// `2TP / (2TP + FP + FN)`, integer counts divided once at the end.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64, WeightingError> {
    if cm.total() == 0 {
        return Err(WeightingError::UndefinedScore);
    }
    let (tp, fp, fn_) = micro_counts(cm);
    Ok((2 * tp) as f64 / (2 * tp + fp + fn_) as f64)
}

/// Scores a pooled confusion matrix. Micro-F1 is the only metric used by
/// the experiments; other metrics can plug in here.
pub trait ValidationMetric {
    fn score(&self, cm: &ConfusionMatrix) -> Result<f64, WeightingError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MicroF1;

impl ValidationMetric for MicroF1 {
    fn score(&self, cm: &ConfusionMatrix) -> Result<f64, WeightingError> {
        micro_f1(cm)
    }
}

pub fn dvw_weight(report: &EvalReport) -> Result<ContributionValue, WeightingError> {
    dvw_weight_with(report, &MicroF1)
}

pub fn dvw_weight_with(
    report: &EvalReport,
    metric: &impl ValidationMetric,
) -> Result<ContributionValue, WeightingError> {
    metric.score(&pool_confusion(report)?).map(ContributionValue)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAsyncParams {
    /// Base mixing weight, in (0, 1].
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Staleness exponent.
    #[serde(default = "default_a")]
    pub a: f64,
    /// Proximal regularization applied during local training.
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_a() -> f64 {
    0.5
}

fn default_rho() -> f64 {
    0.005
}

impl Default for FedAsyncParams {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            a: default_a(),
            rho: default_rho(),
        }
    }
}

impl FedAsyncParams {
    pub fn validate(&self) -> Result<(), WeightingError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.a >= 0.0) || !(self.rho >= 0.0) {
            return Err(WeightingError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    /// `alpha * (staleness + 1)^(-a)`
    pub fn mixing_weight(&self, staleness: u64) -> f64 {
        self.alpha * ((staleness + 1) as f64).powf(-self.a)
    }
}

/// `(1 - alpha_t) * w_c + alpha_t * w_k`.
pub fn fedasync_poly_mix(
    w_c: &ParameterSet,
    w_k: &ParameterSet,
    staleness: u64,
    params: &FedAsyncParams,
) -> Result<ParameterSet, WeightingError> {
    w_c.check_congruent(w_k)?;
    let alpha_t = params.mixing_weight(staleness);
    let mut out = w_c.clone();
    out.scale(1.0 - alpha_t);
    out.scale_add_assign(w_k, alpha_t)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn cm(rows: &[Vec<u64>]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(rows).unwrap()
    }

    fn report(cms: Vec<ConfusionMatrix>) -> EvalReport {
        EvalReport::new(cms.into_iter().enumerate().collect()).unwrap()
    }

    #[test]
    fn fedavg_shares() {
        let sizes = [598usize, 212, 115, 75];
        let total: f64 = sizes.iter().map(|&s| fedavg_weight(s).value()).sum();
        let shares: Vec<f64> = sizes.iter().map(|&s| fedavg_weight(s).value() / total).collect();
        assert_eq!(shares, vec![0.598, 0.212, 0.115, 0.075]);
        assert_eq!(fedavg_weight(100).value() / 1000.0, 0.1);
    }

    #[test]
    fn pooling() {
        let single = report(vec![cm(&[vec![1, 2], vec![3, 4]])]);
        assert_eq!(pool_confusion(&single).unwrap(), cm(&[vec![1, 2], vec![3, 4]]));
        let two = report(vec![cm(&[vec![3, 0], vec![0, 4]]), cm(&[vec![1, 0], vec![0, 2]])]);
        assert_eq!(pool_confusion(&two).unwrap(), cm(&[vec![4, 0], vec![0, 6]]));
    }

    #[test]
    fn pooling_rejects_mismatch() {
        let r = report(vec![ConfusionMatrix::new(2), ConfusionMatrix::new(3)]);
        assert_eq!(pool_confusion(&r), Err(WeightingError::ClassMismatch(2, 3)));
        assert_eq!(pool_confusion(&EvalReport::default()), Err(WeightingError::EmptyReport));
        let dup = EvalReport::new(vec![(1, ConfusionMatrix::new(2)), (1, ConfusionMatrix::new(2))]);
        assert_eq!(dup, Err(WeightingError::DuplicateEvaluator(1)));
    }

    #[test]
    fn micro_f1_cases() {
        assert_eq!(micro_f1(&cm(&[vec![3, 0], vec![0, 5]])).unwrap(), 1.0);
        assert_eq!(micro_f1(&cm(&[vec![0, 2], vec![7, 0]])).unwrap(), 0.0);
        let m = cm(&[vec![5, 1], vec![2, 4]]);
        assert_eq!(micro_counts(&m), (9, 3, 3));
        assert_eq!(micro_f1(&m).unwrap(), 0.75);
        assert_eq!(micro_f1(&ConfusionMatrix::new(3)), Err(WeightingError::UndefinedScore));
    }

    #[test]
    fn dvw_examples() {
        let r = report(vec![cm(&[vec![5, 1], vec![2, 4]]), cm(&[vec![3, 0], vec![0, 3]])]);
        let p = dvw_weight(&r).unwrap().value();
        assert_eq!(p, 30.0 / 36.0);
        let reversed = report(vec![cm(&[vec![3, 0], vec![0, 3]]), cm(&[vec![5, 1], vec![2, 4]])]);
        assert_eq!(dvw_weight(&reversed).unwrap().value(), p);
        let perfect = report(vec![cm(&[vec![2, 0], vec![0, 1]]), cm(&[vec![4, 0], vec![0, 4]])]);
        assert_eq!(dvw_weight(&perfect).unwrap().value(), 1.0);
    }

    fn filled(v: f64) -> ParameterSet {
        ParameterSet::new(vec![(
            "w".into(),
            Matrix::from_vec(1, 3, vec![v, 2.0 * v, -v]).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn fedasync_mixing() {
        let params = FedAsyncParams::default();
        assert_eq!(params.mixing_weight(0), 0.5);
        assert_eq!(params.mixing_weight(3), 0.25);
        assert!(params.mixing_weight(1_000_000_000) < 1e-4);
        let mid = fedasync_poly_mix(&filled(0.0), &filled(1.0), 0, &params).unwrap();
        assert_eq!(mid, filled(0.5));
    }

    #[test]
    fn fedasync_shape_and_param_errors() {
        let other = ParameterSet::new(vec![("w".into(), Matrix::zeros(1, 2))]).unwrap();
        assert!(fedasync_poly_mix(&filled(0.0), &other, 0, &FedAsyncParams::default()).is_err());
        let bad = FedAsyncParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scheme_strings() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("fedavg".parse::<Scheme>().is_err());
    }
}
