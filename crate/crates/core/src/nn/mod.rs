//! Small dense classifiers trained with momentum SGD.

mod eval;
mod matrix;
mod model;
mod optim;
mod params;

use thiserror::Error;

pub use eval::{argmax, evaluate_confusion, predict, ConfusionMatrix};
pub use matrix::Matrix;
pub use model::{backward, forward_loss, init_parameters, logits, Batch, ModelKind, ModelSpec};
pub use optim::{sgd_momentum_step, MomentumState};
pub use params::{GradientSet, ParameterSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("{context}: incompatible shapes {left:?} and {right:?}")]
    Mismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("parameter sets are not shape-congruent")]
    Incongruent,
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unrecognized parameter layout {0:?}")]
    UnknownLayout(Vec<String>),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}
