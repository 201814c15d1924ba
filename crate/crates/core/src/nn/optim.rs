use serde::{Deserialize, Serialize};

use super::{GradientSet, ParameterSet, ShapeError};

/// Momentum buffer `u` with attenuation `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub buffer: ParameterSet,
    pub gamma: f64,
}

impl MomentumState {
    pub fn zeros_like(params: &ParameterSet, gamma: f64) -> Self {
        Self {
            buffer: params.zeros_like(),
            gamma,
        }
    }

    pub fn reset(&mut self) {
        self.buffer.scale(0.0);
    }
}

/// One momentum SGD step:
///
/// ```text
/// u' = gamma * u + g
/// w' = w - eta * u'
/// ```
///
/// The buffer accumulates raw gradients and the learning rate is applied
/// only at the weight update.
pub fn sgd_momentum_step(
    params: &mut ParameterSet,
    mom: &mut MomentumState,
    grads: &GradientSet,
    eta: f64,
) -> Result<(), ShapeError> {
    params.check_congruent(grads)?;
    params.check_congruent(&mom.buffer)?;
    let gamma = mom.gamma;
    for ((w, u), g) in params
        .matrices_mut()
        .zip(mom.buffer.matrices_mut())
        .zip(grads.matrices())
    {
        for ((w, u), g) in w.values_mut().iter_mut().zip(u.values_mut().iter_mut()).zip(g.values()) {
            *u = gamma * *u + g;
            *w -= eta * *u;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn scalar(v: f64) -> ParameterSet {
        ParameterSet::new(vec![("w".into(), Matrix::from_vec(1, 1, vec![v]).unwrap())]).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut w = scalar(1.5);
        let mut mom = MomentumState::zeros_like(&w, 0.9);
        sgd_momentum_step(&mut w, &mut mom, &scalar(0.0), 0.1).unwrap();
        assert_eq!(w, scalar(1.5));
        assert_eq!(mom.buffer, scalar(0.0));
    }

    #[test]
    fn hand_evaluated_two_steps() {
        let mut w = scalar(1.0);
        let mut mom = MomentumState::zeros_like(&w, 0.5);
        let g = scalar(2.0);
        sgd_momentum_step(&mut w, &mut mom, &g, 0.1).unwrap();
        assert!((mom.buffer.flatten()[0] - 2.0).abs() < 1e-15);
        assert!((w.flatten()[0] - 0.8).abs() < 1e-15);
        sgd_momentum_step(&mut w, &mut mom, &g, 0.1).unwrap();
        assert!((mom.buffer.flatten()[0] - 3.0).abs() < 1e-15);
        assert!((w.flatten()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = scalar(1.0);
        let mut mom = MomentumState::zeros_like(&w, 0.5);
        let g = ParameterSet::new(vec![("w".into(), Matrix::zeros(2, 1))]).unwrap();
        assert!(sgd_momentum_step(&mut w, &mut mom, &g, 0.1).is_err());
    }
}
