//! Federation controller.
//!
//! The community tier keeps the unnormalized weighted sum `W_c` and the
//! normalizer `P`, and the caching tier keeps the most recent `(p_k, w_k)`
//! committed by each learner. An asynchronous commit from learner `k`
//! updates both in one pass over the model:
//!
//! ```text
//! P     <- P + p_k - p'_k
//! W_c,i <- W_c,i + p_k * w_k,i - p'_k * w'_k,i
//! w_c   <- W_c / P
//! ```
//!
//! so its cost depends on the model size only, never on the number of
//! learners. [`Controller::audit_recompute`] does the full pass over the
//! cache and is kept as the reference for that update.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::nn::{init_parameters, ConfusionMatrix, ModelSpec, ParameterSet, ShapeError};
use crate::weighting::{fedasync_poly_mix, ContributionValue, FedAsyncParams, WeightingError};

pub type LearnerId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("learner {0} submitted more than one update in the round")]
    DuplicateLearner(LearnerId),
    #[error("synchronous round has zero total contribution")]
    DegenerateRound,
    #[error("commit from learner {learner} would leave the normalizer at {normalizer}")]
    DegenerateState { learner: LearnerId, normalizer: f64 },
    #[error("update from learner {0} reports zero local steps")]
    NoLocalSteps(LearnerId),
    #[error("invalid contribution {value} from learner {learner}")]
    InvalidContribution { learner: LearnerId, value: f64 },
    #[error("cache is empty")]
    EmptyCache,
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
}

/// A learner's request to merge its local model.
#[derive(Debug, Clone)]
pub struct UpdateRequest {
    pub learner_id: LearnerId,
    pub params: ParameterSet,
    /// Mini-batch steps since the learner last fetched the community model.
    pub local_steps: u64,
    pub local_train_size: usize,
    pub local_validation_cm: Option<ConfusionMatrix>,
}

/// The model handed back to learners.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityModel {
    pub params: ParameterSet,
    pub version: u64,
    pub committed_steps: u64,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    contribution: f64,
    /// Committed parameters, flattened into one contiguous buffer so a
    /// commit touches a single allocation.
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CommunityState {
    weighted_sum: ParameterSet,
    normalizer: f64,
    cache: HashMap<LearnerId, CacheEntry>,
    committed_steps: u64,
    version: u64,
}

impl CommunityState {
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn weighted_sum(&self) -> &ParameterSet {
        &self.weighted_sum
    }

    pub fn cached_learners(&self) -> usize {
        self.cache.len()
    }

    pub fn cached_contribution(&self, learner: LearnerId) -> Option<f64> {
        self.cache.get(&learner).map(|e| e.contribution)
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    state: CommunityState,
    community: ParameterSet,
    last_update_ops: usize,
}

impl Controller {
    /// Starts from the initial model of `spec`, with an empty cache.
    pub fn new(spec: &ModelSpec) -> Self {
        Self::from_params(init_parameters(spec))
    }

    pub fn from_params(initial: ParameterSet) -> Self {
        Self {
            state: CommunityState {
                weighted_sum: initial.zeros_like(),
                normalizer: 0.0,
                cache: HashMap::new(),
                committed_steps: 0,
                version: 0,
            },
            community: initial,
            last_update_ops: 0,
        }
    }

    pub fn state(&self) -> &CommunityState {
        &self.state
    }

    pub fn community(&self) -> CommunityModel {
        CommunityModel {
            params: self.community.clone(),
            version: self.state.version,
            committed_steps: self.state.committed_steps,
        }
    }

    pub fn community_params(&self) -> &ParameterSet {
        &self.community
    }

    pub fn version(&self) -> u64 {
        self.state.version
    }

    /// Total mini-batch steps in every committed update so far.
    pub fn committed_steps(&self) -> u64 {
        self.state.committed_steps
    }

    /// Scalar operations spent updating `W_c` in the last async commit.
    pub fn last_update_ops(&self) -> usize {
        self.last_update_ops
    }

    fn check_request(&self, req: &UpdateRequest, p: ContributionValue) -> Result<(), ControllerError> {
        if req.local_steps == 0 {
            return Err(ControllerError::NoLocalSteps(req.learner_id));
        }
        if !(p.value() >= 0.0 && p.value().is_finite()) {
            return Err(ControllerError::InvalidContribution {
                learner: req.learner_id,
                value: p.value(),
            });
        }
        self.community.check_congruent(&req.params)?;
        Ok(())
    }

    /// Applies one asynchronous commit through the cache.
    pub fn handle_async_update(
        &mut self,
        req: UpdateRequest,
        p: ContributionValue,
    ) -> Result<CommunityModel, ControllerError> {
        self.check_request(&req, p)?;
        let p_k = p.value();
        let p_prev = self.state.cache.get(&req.learner_id).map_or(0.0, |e| e.contribution);
        let normalizer = self.state.normalizer + p_k - p_prev;
        let scale = self.state.normalizer.max(p_k).max(p_prev);
        if !(normalizer > scale * 1e-12) {
            return Err(ControllerError::DegenerateState {
                learner: req.learner_id,
                normalizer,
            });
        }

        let mut ops = 0;
        let sums = self.state.weighted_sum.matrices_mut().zip(req.params.matrices());
        match self.state.cache.get_mut(&req.learner_id) {
            Some(entry) => {
                // fold the old contribution out and overwrite it in the same pass
                let mut old = entry.values.iter_mut();
                for (sum, new) in sums {
                    for ((s, &w), w_old) in sum.values_mut().iter_mut().zip(new.values()).zip(&mut old) {
                        *s += p_k * w - p_prev * *w_old;
                        *w_old = w;
                    }
                    ops += 3 * sum.len();
                }
                entry.contribution = p_k;
            }
            None => {
                for (sum, new) in sums {
                    for (s, &w) in sum.values_mut().iter_mut().zip(new.values()) {
                        *s += p_k * w;
                    }
                    ops += 3 * sum.len();
                }
                self.state.cache.insert(
                    req.learner_id,
                    CacheEntry {
                        contribution: p_k,
                        values: req.params.flatten(),
                    },
                );
            }
        }
        self.last_update_ops = ops;
        self.state.normalizer = normalizer;

        let inv = 1.0 / normalizer;
        for (dst, src) in self.community.matrices_mut().zip(self.state.weighted_sum.matrices()) {
            for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
                *d = s * inv;
            }
        }

        self.state.committed_steps += req.local_steps;
        self.state.version += 1;
        Ok(self.community())
    }

    /// Merges one full synchronous round: `w_c = sum_k (p_k / P) w_k`.
    /// The cache is replaced by the round's entries.
    pub fn handle_sync_round(
        &mut self,
        round: Vec<(UpdateRequest, ContributionValue)>,
    ) -> Result<CommunityModel, ControllerError> {
        for (i, (req, p)) in round.iter().enumerate() {
            self.check_request(req, *p)?;
            if round[..i].iter().any(|(other, _)| other.learner_id == req.learner_id) {
                return Err(ControllerError::DuplicateLearner(req.learner_id));
            }
        }
        let normalizer: f64 = round.iter().map(|(_, p)| p.value()).sum();
        if !(normalizer > 0.0) {
            return Err(ControllerError::DegenerateRound);
        }
        let mut weighted_sum = self.community.zeros_like();
        let mut community = self.community.zeros_like();
        for (req, p) in &round {
            weighted_sum.scale_add_assign(&req.params, p.value())?;
            community.scale_add_assign(&req.params, p.value() / normalizer)?;
        }
        let steps: u64 = round.iter().map(|(r, _)| r.local_steps).sum();

        self.state.weighted_sum = weighted_sum;
        self.state.normalizer = normalizer;
        self.state.cache = round
            .into_iter()
            .map(|(req, p)| {
                (
                    req.learner_id,
                    CacheEntry {
                        contribution: p.value(),
                        values: req.params.flatten(),
                    },
                )
            })
            .collect();
        self.community = community;
        self.state.committed_steps += steps;
        self.state.version += 1;
        Ok(self.community())
    }

    /// FedAsync commit: mixes the local model into `w_c` with a weight that
    /// decays polynomially in `staleness`. Bypasses the cache.
    pub fn handle_fedasync_update(
        &mut self,
        req: UpdateRequest,
        staleness: u64,
        params: &FedAsyncParams,
    ) -> Result<CommunityModel, ControllerError> {
        self.check_request(&req, ContributionValue(0.0))?;
        self.community = fedasync_poly_mix(&self.community, &req.params, staleness, params)?;
        self.state.committed_steps += req.local_steps;
        self.state.version += 1;
        Ok(self.community())
    }

    /// Recomputes `sum p'_k w'_k / sum p'_k` over every cache entry.
    pub fn audit_recompute(&self) -> Result<CommunityModel, ControllerError> {
        audit_recompute(&self.state).map(|params| CommunityModel {
            params,
            version: self.state.version,
            committed_steps: self.state.committed_steps,
        })
    }
}

/// Full `O(MN)` pass over the cached contributions, in learner id order.
pub fn audit_recompute(state: &CommunityState) -> Result<ParameterSet, ControllerError> {
    let mut ids: Vec<&LearnerId> = state.cache.keys().collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(ControllerError::EmptyCache);
    }
    let mut flat = vec![0.0; state.weighted_sum.num_values()];
    let mut normalizer = 0.0;
    for id in ids {
        let entry = &state.cache[id];
        for (s, &w) in flat.iter_mut().zip(&entry.values) {
            *s += entry.contribution * w;
        }
        normalizer += entry.contribution;
    }
    if !(normalizer > 0.0) {
        return Err(ControllerError::EmptyCache);
    }
    let mut out = state.weighted_sum.zeros_like();
    for (i, s) in flat.into_iter().enumerate() {
        *out.value_mut(i) = s / normalizer;
    }
    Ok(out)
}

/// Thread-safe wrapper. Mutations are serialized by one lock and applied
/// in lock-acquisition order; the committed step count can be read
/// without taking the lock.
#[derive(Debug)]
pub struct SharedController {
    inner: Mutex<Controller>,
    committed: AtomicU64,
}

impl SharedController {
    pub fn new(controller: Controller) -> Self {
        let committed = AtomicU64::new(controller.committed_steps());
        Self {
            inner: Mutex::new(controller),
            committed,
        }
    }

    pub fn committed_steps(&self) -> u64 {
        self.committed.load(Ordering::Acquire)
    }

    pub fn fetch(&self) -> CommunityModel {
        self.lock().community()
    }

    pub fn submit(&self, req: UpdateRequest, p: ContributionValue) -> Result<CommunityModel, ControllerError> {
        let mut ctl = self.lock();
        let out = ctl.handle_async_update(req, p)?;
        self.committed.store(ctl.committed_steps(), Ordering::Release);
        Ok(out)
    }

    pub fn into_inner(self) -> Controller {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Controller> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}
