//! Learner runtime: local training and update triggering.
//!
//! A learner trains for whole epochs and, at every epoch boundary, decides
//! whether to request a community update. Under the fixed policy that is
//! every `uf` epochs. Under the adaptive policy the decision uses the
//! percentage change of the local validation loss (`Vpct`) and the
//! learner's effective staleness:
//!
//! * C1: `Vpct >= 0`
//! * C2: `Vpct < 0 && |Vpct| <= vc_loss`
//! * C3: `staleness > median(staleness of the first warmup cycles)`
//!
//! A C1/C2 hit spends one tombstone. The cycle ends on the hit that
//! exceeds `vc_tomb`, immediately on C3, or at the epoch cap.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{CommunityModel, LearnerId, UpdateRequest};
use crate::data::Dataset;
use crate::nn::{
    backward, evaluate_confusion, forward_loss, sgd_momentum_step, MomentumState, ParameterSet, ShapeError,
};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("previous validation loss {0} is not positive")]
    UndefinedPercentage(f64),
    #[error("committed step counter went backwards: fetched at {at_fetch}, now {now}")]
    CounterRegression { at_fetch: u64, now: u64 },
    #[error("learner {0} has no training data")]
    EmptyTrainingSet(LearnerId),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_eta() -> f64 {
    0.05
}

fn default_gamma() -> f64 {
    0.9
}

fn default_batch_size() -> usize {
    32
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            gamma: default_gamma(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerPolicy {
    /// Request an update every `uf` local epochs.
    Fixed {
        #[serde(default = "default_uf")]
        uf: u32,
    },
    Adaptive {
        #[serde(default)]
        vc_loss: f64,
        #[serde(default)]
        vc_tomb: u32,
        #[serde(default = "default_warmup")]
        warmup_cycles: usize,
        #[serde(default = "default_max_epochs")]
        max_epochs_per_cycle: u32,
    },
}

pub fn default_uf() -> u32 {
    4
}

fn default_warmup() -> usize {
    20
}

fn default_max_epochs() -> u32 {
    32
}

impl Default for TriggerPolicy {
    fn default() -> Self {
        TriggerPolicy::Fixed { uf: default_uf() }
    }
}

impl TriggerPolicy {
    pub fn adaptive(vc_loss: f64, vc_tomb: u32) -> Self {
        TriggerPolicy::Adaptive {
            vc_loss,
            vc_tomb,
            warmup_cycles: default_warmup(),
            max_epochs_per_cycle: default_max_epochs(),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, TriggerPolicy::Adaptive { .. })
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            TriggerPolicy::Fixed { uf: 0 } => Err("uf must be at least 1".into()),
            TriggerPolicy::Adaptive { vc_loss, .. } if !(vc_loss >= 0.0) => {
                Err(format!("vc_loss {vc_loss} must be >= 0"))
            }
            TriggerPolicy::Adaptive {
                max_epochs_per_cycle: 0,
                ..
            } => Err("max_epochs_per_cycle must be at least 1".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerCause {
    C1,
    C2,
    C3,
    /// Fixed update frequency, or the adaptive epoch cap.
    Fixed,
}

impl TriggerCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerCause::C1 => "C1",
            TriggerCause::C2 => "C2",
            TriggerCause::C3 => "C3",
            TriggerCause::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerDecision {
    Continue,
    Trigger(TriggerCause),
}

/// A completed validation cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCycle {
    pub epochs: u32,
    pub losses: Vec<f64>,
    pub tombstones_used: u32,
    pub staleness_at_commit: u64,
    pub trigger_cause: TriggerCause,
}

/// The cycle in progress.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleProgress {
    pub epochs: u32,
    pub losses: Vec<f64>,
    pub tombstones_used: u32,
}

/// `100 * (now - prev) / prev`
pub fn compute_vpct(vloss_now: f64, vloss_prev: f64) -> Result<f64, LearnerError> {
    if !(vloss_prev > 0.0) {
        return Err(LearnerError::UndefinedPercentage(vloss_prev));
    }
    Ok(100.0 * (vloss_now - vloss_prev) / vloss_prev)
}

/// Evaluates the adaptive trigger after the epoch recorded in `progress`.
///
/// `vpct` is `None` on the first epoch of a cycle. `threshold` is the
/// frozen staleness median, `None` until warmup completes.
pub fn check_adaptive_trigger(
    progress: &mut CycleProgress,
    policy: &TriggerPolicy,
    vpct: Option<f64>,
    staleness_now: u64,
    threshold: Option<f64>,
) -> TriggerDecision {
    let TriggerPolicy::Adaptive {
        vc_loss,
        vc_tomb,
        max_epochs_per_cycle,
        ..
    } = *policy
    else {
        return match *policy {
            TriggerPolicy::Fixed { uf } if progress.epochs >= uf => TriggerDecision::Trigger(TriggerCause::Fixed),
            _ => TriggerDecision::Continue,
        };
    };
    if let Some(vpct) = vpct {
        let hit = if vpct >= 0.0 {
            Some(TriggerCause::C1)
        } else if vpct.abs() <= vc_loss {
            Some(TriggerCause::C2)
        } else {
            None
        };
        if let Some(cause) = hit {
            progress.tombstones_used += 1;
            if progress.tombstones_used > vc_tomb {
                return TriggerDecision::Trigger(cause);
            }
        }
    }
    if let Some(t) = threshold {
        if staleness_now as f64 > t {
            return TriggerDecision::Trigger(TriggerCause::C3);
        }
    }
    if progress.epochs >= max_epochs_per_cycle {
        return TriggerDecision::Trigger(TriggerCause::Fixed);
    }
    TriggerDecision::Continue
}

/// Per-cycle staleness samples of one learner.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StalenessSummary {
    pub samples: Vec<u64>,
    pub warmup_cycles: usize,
}

/// Lower-middle median.
pub fn lower_median(values: &[u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Median of the first `warmup_cycles` samples; `None` until that many
/// cycles have completed. Later samples do not move the threshold.
pub fn staleness_threshold(summary: &StalenessSummary) -> Option<f64> {
    if summary.warmup_cycles == 0 || summary.samples.len() < summary.warmup_cycles {
        return None;
    }
    lower_median(&summary.samples[..summary.warmup_cycles]).map(|m| m as f64)
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    pub id: LearnerId,
    pub params: ParameterSet,
    pub momentum: MomentumState,
    /// Community parameters at the last fetch, the proximal anchor.
    pub anchor: ParameterSet,
    pub steps_since_fetch: u64,
    pub committed_at_fetch: u64,
    pub version_at_fetch: u64,
    pub cycles: Vec<ValidationCycle>,
    pub current: CycleProgress,
    pub policy: TriggerPolicy,
    pub proximal_mu: f64,
    pending: Option<TriggerCause>,
    rng: ChaCha8Rng,
}

impl LearnerState {
    pub fn new(
        id: LearnerId,
        initial: &CommunityModel,
        gamma: f64,
        policy: TriggerPolicy,
        proximal_mu: f64,
        seed: u64,
    ) -> Self {
        Self {
            id,
            params: initial.params.clone(),
            momentum: MomentumState::zeros_like(&initial.params, gamma),
            anchor: initial.params.clone(),
            steps_since_fetch: 0,
            committed_at_fetch: initial.committed_steps,
            version_at_fetch: initial.version,
            cycles: Vec::new(),
            current: CycleProgress::default(),
            policy,
            proximal_mu,
            pending: None,
            rng: stream_rng(seed, stream::LEARNER_BASE + id as u64),
        }
    }

    /// Steps that one epoch over `n` samples takes with batch size `beta`.
    pub fn steps_per_epoch(n: usize, beta: usize) -> u64 {
        n.div_ceil(beta.max(1)) as u64
    }

    /// One pass over `train` in a freshly shuffled order, one momentum step
    /// per batch. Returns the number of steps taken.
    pub fn run_epoch(&mut self, train: &Dataset, hp: &Hyperparameters) -> Result<u64, LearnerError> {
        if train.is_empty() {
            return Err(LearnerError::EmptyTrainingSet(self.id));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut steps = 0;
        for chunk in order.chunks(hp.batch_size.max(1)) {
            let batch = train.batch(chunk);
            let mut grads = backward(&self.params, &batch)?;
            if self.proximal_mu > 0.0 {
                grads.scale_add_assign(&self.params, self.proximal_mu)?;
                grads.scale_add_assign(&self.anchor, -self.proximal_mu)?;
            }
            sgd_momentum_step(&mut self.params, &mut self.momentum, &grads, hp.eta)?;
            steps += 1;
        }
        self.steps_since_fetch += steps;
        Ok(steps)
    }

    pub fn validation_loss(&self, validation: &Dataset) -> Result<f64, LearnerError> {
        Ok(forward_loss(&self.params, &validation.as_batch())?.0)
    }

    /// `S_c(now) - S_c(at fetch) + local steps`.
    pub fn effective_staleness(&self, committed_now: u64) -> Result<u64, LearnerError> {
        effective_staleness(committed_now, self)
    }

    pub fn staleness_summary(&self) -> StalenessSummary {
        let warmup_cycles = match self.policy {
            TriggerPolicy::Adaptive { warmup_cycles, .. } => warmup_cycles,
            TriggerPolicy::Fixed { .. } => default_warmup(),
        };
        StalenessSummary {
            samples: self.cycles.iter().map(|c| c.staleness_at_commit).collect(),
            warmup_cycles,
        }
    }

    /// Closes the epoch just trained: records its validation loss and
    /// evaluates the trigger policy.
    pub fn end_epoch(
        &mut self,
        validation_loss: Option<f64>,
        committed_now: u64,
    ) -> Result<TriggerDecision, LearnerError> {
        self.current.epochs += 1;
        let mut vpct = None;
        if let Some(loss) = validation_loss {
            if let Some(&prev) = self.current.losses.last() {
                // a zero previous loss cannot improve further; count it as a plateau
                vpct = Some(compute_vpct(loss, prev).unwrap_or(0.0));
            }
            self.current.losses.push(loss);
        }
        let staleness = self.effective_staleness(committed_now)?;
        let threshold = staleness_threshold(&self.staleness_summary());
        let decision = check_adaptive_trigger(&mut self.current, &self.policy, vpct, staleness, threshold);
        if let TriggerDecision::Trigger(cause) = decision {
            self.pending = Some(cause);
        }
        Ok(decision)
    }

    pub fn pending_trigger(&self) -> Option<TriggerCause> {
        self.pending
    }

    pub fn make_request(&self, train_size: usize, validation: Option<&Dataset>) -> Result<UpdateRequest, LearnerError> {
        let local_validation_cm = match validation {
            Some(v) if !v.is_empty() => Some(evaluate_confusion(&self.params, &v.features, &v.labels)?),
            _ => None,
        };
        Ok(UpdateRequest {
            learner_id: self.id,
            params: self.params.clone(),
            local_steps: self.steps_since_fetch,
            local_train_size: train_size,
            local_validation_cm,
        })
    }

    /// Replaces the local model with the community model. A pending cycle
    /// is archived with `staleness_at_commit`.
    pub fn adopt_community(&mut self, cm: &CommunityModel, staleness_at_commit: u64) {
        if let Some(cause) = self.pending.take() {
            let progress = std::mem::take(&mut self.current);
            self.cycles.push(ValidationCycle {
                epochs: progress.epochs,
                losses: progress.losses,
                tombstones_used: progress.tombstones_used,
                staleness_at_commit,
                trigger_cause: cause,
            });
        }
        self.current = CycleProgress::default();
        self.params = cm.params.clone();
        self.anchor = cm.params.clone();
        self.momentum.reset();
        self.steps_since_fetch = 0;
        self.committed_at_fetch = cm.committed_steps;
        self.version_at_fetch = cm.version;
    }
}

pub fn effective_staleness(committed_now: u64, state: &LearnerState) -> Result<u64, LearnerError> {
    if committed_now < state.committed_at_fetch {
        return Err(LearnerError::CounterRegression {
            at_fetch: state.committed_at_fetch,
            now: committed_now,
        });
    }
    Ok(committed_now - state.committed_at_fetch + state.steps_since_fetch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::nn::{init_parameters, ModelSpec};

    fn community(params: ParameterSet, committed: u64) -> CommunityModel {
        CommunityModel {
            params,
            version: 0,
            committed_steps: committed,
        }
    }

    fn learner(policy: TriggerPolicy) -> LearnerState {
        let params = init_parameters(&ModelSpec::softmax(2, 3, 1990));
        LearnerState::new(0, &community(params, 0), 0.9, policy, 0.0, 1990)
    }

    #[test]
    fn vpct_arithmetic() {
        assert_eq!(compute_vpct(1.0, 1.0).unwrap(), 0.0);
        assert!((compute_vpct(0.9, 1.0).unwrap() + 10.0).abs() < 1e-12);
        assert!((compute_vpct(0.6, 0.5).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(compute_vpct(1.0, 0.0), Err(LearnerError::UndefinedPercentage(0.0)));
    }

    #[test]
    fn epoch_step_count() {
        let data = generate_blobs(2, 2, 125, 0.1, 3);
        assert_eq!(data.len(), 250);
        let mut l = learner(TriggerPolicy::default());
        let hp = Hyperparameters {
            batch_size: 100,
            ..Default::default()
        };
        assert_eq!(l.run_epoch(&data, &hp).unwrap(), 3);
        assert_eq!(l.steps_since_fetch, 3);
    }

    #[test]
    fn zero_mu_matches_plain_training() {
        let data = generate_blobs(2, 3, 20, 0.3, 3);
        let hp = Hyperparameters::default();
        let mut a = learner(TriggerPolicy::default());
        let mut b = learner(TriggerPolicy::default());
        b.proximal_mu = 0.0;
        a.run_epoch(&data, &hp).unwrap();
        b.run_epoch(&data, &hp).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn proximal_contraction_closed_form() {
        // With a zero data gradient the step is w' = w - eta*mu*(w - w_global)
        // (gamma = 0). A zero-input, perfectly balanced batch under zero
        // biases yields zero weight gradient and zero bias gradient.
        let spec = ModelSpec::softmax(2, 2, 1);
        let anchor = init_parameters(&spec);
        let mut l = LearnerState::new(0, &community(anchor.clone(), 0), 0.0, TriggerPolicy::default(), 1e3, 1);
        let mut shifted = anchor.clone();
        shifted.scale_add_assign(&anchor, 1.0).unwrap(); // w = 2 * anchor
        l.params = shifted.clone();
        let features = crate::nn::Matrix::zeros(2, 2);
        let data = Dataset::new(features, vec![0, 1], 2).unwrap();
        // biases are zero in `anchor`, so logits are zero and the balanced
        // batch has zero data gradient
        let hp = Hyperparameters {
            eta: 1e-4,
            gamma: 0.0,
            batch_size: 2,
        };
        l.run_epoch(&data, &hp).unwrap();
        let factor = 1.0 - hp.eta * 1e3;
        for ((w, w0), a) in l.params.flatten().iter().zip(shifted.flatten()).zip(anchor.flatten()) {
            let expected = a + factor * (w0 - a);
            assert!((w - expected).abs() < 1e-12, "{w} vs {expected}");
            assert!((w - a).abs() <= (w0 - a).abs());
        }
    }

    #[test]
    fn fixed_policy_fires_every_uf() {
        let mut l = learner(TriggerPolicy::Fixed { uf: 3 });
        l.steps_since_fetch = 1;
        assert_eq!(l.end_epoch(None, 0).unwrap(), TriggerDecision::Continue);
        assert_eq!(l.end_epoch(None, 0).unwrap(), TriggerDecision::Continue);
        assert_eq!(
            l.end_epoch(None, 0).unwrap(),
            TriggerDecision::Trigger(TriggerCause::Fixed)
        );
    }

    #[test]
    fn c1_with_no_tombstones() {
        let policy = TriggerPolicy::adaptive(0.0, 0);
        let mut p = CycleProgress {
            epochs: 2,
            ..Default::default()
        };
        assert_eq!(
            check_adaptive_trigger(&mut p, &policy, Some(2.0), 0, None),
            TriggerDecision::Trigger(TriggerCause::C1)
        );
    }

    #[test]
    fn c2_consumes_tombstone() {
        let policy = TriggerPolicy::adaptive(1.0, 3);
        let mut p = CycleProgress {
            epochs: 2,
            ..Default::default()
        };
        assert_eq!(
            check_adaptive_trigger(&mut p, &policy, Some(-0.5), 0, None),
            TriggerDecision::Continue
        );
        assert_eq!(p.tombstones_used, 1);
        // a large improvement is not a failure
        assert_eq!(
            check_adaptive_trigger(&mut p, &policy, Some(-5.0), 0, None),
            TriggerDecision::Continue
        );
        assert_eq!(p.tombstones_used, 1);
    }

    #[test]
    fn first_epoch_never_fires_on_loss() {
        let mut l = learner(TriggerPolicy::adaptive(100.0, 0));
        assert_eq!(l.end_epoch(Some(1.0), 0).unwrap(), TriggerDecision::Continue);
        assert_eq!(
            l.end_epoch(Some(1.0), 0).unwrap(),
            TriggerDecision::Trigger(TriggerCause::C1)
        );
    }

    #[test]
    fn epoch_cap() {
        let policy = TriggerPolicy::Adaptive {
            vc_loss: 0.0,
            vc_tomb: 0,
            warmup_cycles: 20,
            max_epochs_per_cycle: 3,
        };
        let mut l = learner(policy);
        let decisions: Vec<_> = [1.0, 0.5, 0.25]
            .into_iter()
            .map(|loss| l.end_epoch(Some(loss), 0).unwrap())
            .collect();
        assert_eq!(decisions[..2], [TriggerDecision::Continue; 2]);
        assert_eq!(decisions[2], TriggerDecision::Trigger(TriggerCause::Fixed));
    }

    #[test]
    fn staleness_formula() {
        let mut l = learner(TriggerPolicy::default());
        l.steps_since_fetch = 12;
        assert_eq!(l.effective_staleness(0).unwrap(), 12);
        l.committed_at_fetch = 100;
        l.steps_since_fetch = 20;
        assert_eq!(l.effective_staleness(160).unwrap(), 80);
        assert!(matches!(
            l.effective_staleness(99),
            Err(LearnerError::CounterRegression { .. })
        ));
    }

    #[test]
    fn threshold_warmup() {
        let mut s = StalenessSummary {
            samples: (1..=19).collect(),
            warmup_cycles: 20,
        };
        assert_eq!(staleness_threshold(&s), None);
        s.samples = vec![3, 7, 5, 12, 9, 1, 30, 4, 8, 2, 6, 11, 15, 10, 20, 13, 14, 16, 17, 18];
        // sorted: 1..=18 then 20, 30 -> rank 10 is 10
        assert_eq!(staleness_threshold(&s), Some(10.0));
        s.samples.extend([1000, 2000, 3000]);
        assert_eq!(staleness_threshold(&s), Some(10.0));
        let flat = StalenessSummary {
            samples: vec![6; 20],
            warmup_cycles: 20,
        };
        assert_eq!(staleness_threshold(&flat), Some(6.0));
    }

    #[test]
    fn adoption() {
        let mut l = learner(TriggerPolicy::Fixed { uf: 1 });
        let data = generate_blobs(2, 3, 10, 0.3, 3);
        l.run_epoch(&data, &Hyperparameters::default()).unwrap();
        assert_eq!(
            l.end_epoch(None, 0).unwrap(),
            TriggerDecision::Trigger(TriggerCause::Fixed)
        );
        let cm = community(init_parameters(&ModelSpec::softmax(2, 3, 5)), 40);
        l.adopt_community(&cm, 7);
        assert_eq!(l.cycles.len(), 1);
        assert_eq!(l.cycles[0].staleness_at_commit, 7);
        assert_eq!(l.params, cm.params);
        assert!(l.momentum.buffer.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(l.effective_staleness(40).unwrap(), 0);
        l.adopt_community(&cm, 0);
        assert_eq!(l.params, cm.params);
        assert_eq!(l.cycles.len(), 1);
    }
}
