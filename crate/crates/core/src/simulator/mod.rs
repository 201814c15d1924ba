//! Deterministic discrete-event harness.
//!
//! Learners run on a virtual clock. An epoch of learner `k` lasts
//! `steps / steps_per_second` (plus one pass over its validation set when
//! the adaptive policy needs a validation loss). Synchronous schemes wait
//! for every learner to finish `uf` epochs, then commit one round.
//! Asynchronous schemes commit each request as it arrives, in event
//! order. DVW schemes first evaluate the candidate model on every
//! learner's validation set; the evaluators run in parallel, so the
//! requester waits for the slowest of the other learners. Evaluators do
//! not pause their own training, and controller commits take no virtual
//! time.

mod clock;
mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Event, EventKind, EventQueue};
pub use metrics::{
    staleness_report, GroupStaleness, LearnerStaleness, MetricsLog, MetricsRow, StalenessReport, StalenessStats,
    INIT_CAUSE,
};

use crate::controller::{CommunityModel, Controller, ControllerError, UpdateRequest};
use crate::data::{Dataset, FederatedSplit};
use crate::learner::{Hyperparameters, LearnerError, LearnerState, TriggerDecision, TriggerPolicy, ValidationCycle};
use crate::nn::{evaluate_confusion, ModelSpec, ParameterSet, ShapeError};
use crate::weighting::{
    dvw_weight, fedavg_weight, ContributionValue, EvalReport, FedAsyncParams, Scheme, WeightingError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedGroup {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfile {
    pub steps_per_second: f64,
    pub eval_samples_per_second: f64,
    pub group: SpeedGroup,
}

impl SpeedProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.steps_per_second > 0.0 && self.steps_per_second.is_finite()) {
            return Err(format!("steps_per_second {} must be positive", self.steps_per_second));
        }
        if !(self.eval_samples_per_second > 0.0 && self.eval_samples_per_second.is_finite()) {
            return Err(format!(
                "eval_samples_per_second {} must be positive",
                self.eval_samples_per_second
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Everything the event loop needs besides the data.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    pub model: ModelSpec,
    pub hyperparameters: Hyperparameters,
    /// Trigger policy per learner.
    pub policies: Vec<TriggerPolicy>,
    pub profiles: Vec<SpeedProfile>,
    pub fedasync: FedAsyncParams,
    pub proximal_mu: f64,
    pub seed: u64,
    /// Stop before any event later than this virtual time.
    pub time_budget: f64,
    /// Stop once the community model reaches this version.
    pub max_versions: Option<u64>,
    /// One-way transfer time of a model, in virtual seconds.
    pub model_latency: f64,
}

impl SimulationConfig {
    pub fn validate(&self, num_learners: usize) -> Result<(), SimulationError> {
        let err = |m: String| Err(SimulationError::Config(m));
        if num_learners == 0 {
            return err("federation has no learners".into());
        }
        if self.policies.len() != num_learners || self.profiles.len() != num_learners {
            return err(format!(
                "{} learners but {} policies and {} speed profiles",
                num_learners,
                self.policies.len(),
                self.profiles.len()
            ));
        }
        for p in &self.profiles {
            p.validate().map_err(SimulationError::Config)?;
        }
        for p in &self.policies {
            p.validate().map_err(SimulationError::Config)?;
            if self.scheme.is_sync() && p.is_adaptive() {
                return err(format!("scheme {} requires a fixed update frequency", self.scheme));
            }
        }
        if !(self.hyperparameters.eta > 0.0) || !(0.0..1.0).contains(&self.hyperparameters.gamma) {
            return err(format!("invalid hyperparameters {:?}", self.hyperparameters));
        }
        if self.hyperparameters.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if !(self.model_latency >= 0.0 && self.model_latency.is_finite()) {
            return err(format!("model_latency {} must be >= 0", self.model_latency));
        }
        if !(self.time_budget >= 0.0) {
            return err(format!("time_budget {} must be >= 0", self.time_budget));
        }
        if self.time_budget.is_infinite() && self.max_versions.is_none() {
            return err("either time_budget or max_versions must bound the run".into());
        }
        self.fedasync
            .validate()
            .map_err(|e| SimulationError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn groups(&self) -> Vec<SpeedGroup> {
        self.profiles.iter().map(|p| p.group).collect()
    }
}

/// One applied update, with the bookkeeping behind its staleness.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub time: f64,
    pub version: u64,
    pub learner: usize,
    pub local_steps: u64,
    /// Controller step count when the learner last fetched.
    pub committed_at_fetch: u64,
    /// Controller step count just before this update was applied.
    pub committed_before: u64,
    pub staleness: u64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub log: MetricsLog,
    pub commits: Vec<CommitRecord>,
    pub cycles: Vec<Vec<ValidationCycle>>,
    pub final_model: CommunityModel,
    pub events_processed: u64,
}

/// Top-1 accuracy of `params` on `test`.
pub fn evaluate_test_accuracy(params: &ParameterSet, test: &Dataset) -> Result<f64, ShapeError> {
    let cm = evaluate_confusion(params, &test.features, &test.labels)?;
    Ok(cm.accuracy().unwrap_or(0.0))
}

struct Pending {
    request: UpdateRequest,
    contribution: Option<ContributionValue>,
}

struct Engine<'a> {
    cfg: &'a SimulationConfig,
    split: &'a FederatedSplit,
    controller: Controller,
    learners: Vec<LearnerState>,
    queue: EventQueue,
    pending: Vec<Option<Pending>>,
    log: MetricsLog,
    commits: Vec<CommitRecord>,
    requests: u64,
    models_exchanged: u64,
    done: bool,
    processed: u64,
}

/// Runs the federation until the time budget or the version cap is hit.
pub fn run_simulation(cfg: &SimulationConfig, split: &FederatedSplit) -> Result<SimulationOutcome, SimulationError> {
    let n = split.per_learner.len();
    cfg.validate(n)?;
    if let Some((k, _)) = split.per_learner.iter().enumerate().find(|(_, l)| l.train.is_empty()) {
        return Err(SimulationError::Config(format!("learner {k} has no training data")));
    }
    let controller = Controller::new(&cfg.model);
    let initial = controller.community();
    let learners = (0..n)
        .map(|k| {
            LearnerState::new(
                k,
                &initial,
                cfg.hyperparameters.gamma,
                cfg.policies[k],
                effective_mu(cfg),
                cfg.seed,
            )
        })
        .collect();
    let mut engine = Engine {
        cfg,
        split,
        controller,
        learners,
        queue: EventQueue::new(),
        pending: (0..n).map(|_| None).collect(),
        log: MetricsLog::default(),
        commits: Vec::new(),
        requests: 0,
        models_exchanged: 0,
        done: false,
        processed: 0,
    };
    engine.run()?;
    let final_model = engine.controller.community();
    let cycles = engine.learners.into_iter().map(|l| l.cycles).collect();
    Ok(SimulationOutcome {
        log: engine.log,
        commits: engine.commits,
        cycles,
        final_model,
        events_processed: engine.processed,
    })
}

/// FedAsync trains against its proximal term `rho`; other schemes use the
/// configured FedProx coefficient.
fn effective_mu(cfg: &SimulationConfig) -> f64 {
    match cfg.scheme {
        Scheme::FedAsyncPoly => cfg.fedasync.rho,
        _ => cfg.proximal_mu,
    }
}

impl Engine<'_> {
    fn n(&self) -> usize {
        self.learners.len()
    }

    fn run(&mut self) -> Result<(), SimulationError> {
        let acc = self.test_accuracy()?;
        self.log.rows.push(MetricsRow {
            virtual_time: 0.0,
            version: 0,
            scheme: self.cfg.scheme.to_string(),
            test_top1: acc,
            committing_learner: None,
            p_k: None,
            staleness: None,
            cause: INIT_CAUSE.to_string(),
            models_exchanged_cum: 0,
            update_requests_cum: 0,
        });
        if self.cfg.max_versions == Some(0) {
            return Ok(());
        }
        for k in 0..self.n() {
            self.queue
                .schedule(self.cfg.model_latency + self.epoch_duration(k), k, EventKind::EpochDone);
        }
        while let Some(t) = self.queue.peek_time() {
            if t > self.cfg.time_budget || self.done {
                break;
            }
            let event = self.queue.pop().expect("peeked");
            self.processed += 1;
            match event.kind {
                EventKind::EpochDone => self.on_epoch_done(event.learner)?,
                EventKind::EvalDone | EventKind::UpdateCommit => {
                    if self.cfg.scheme.is_sync() {
                        self.commit_round()?;
                    } else {
                        self.commit_async(event.learner)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn epoch_duration(&self, k: usize) -> f64 {
        let data = &self.split.per_learner[k];
        let profile = &self.cfg.profiles[k];
        let steps = LearnerState::steps_per_epoch(data.train.len(), self.cfg.hyperparameters.batch_size);
        let mut duration = steps as f64 / profile.steps_per_second;
        if self.learners[k].policy.is_adaptive() {
            duration += data.validation.len() as f64 / profile.eval_samples_per_second;
        }
        duration
    }

    /// Parallel evaluation of a candidate from learner `k` on the other
    /// learners' validation sets.
    fn fan_out_duration(&self, k: usize) -> f64 {
        (0..self.n())
            .filter(|&v| v != k)
            .map(|v| self.split.per_learner[v].validation.len() as f64 / self.cfg.profiles[v].eval_samples_per_second)
            .fold(0.0, f64::max)
    }

    fn test_accuracy(&self) -> Result<f64, SimulationError> {
        Ok(evaluate_test_accuracy(
            self.controller.community_params(),
            &self.split.test,
        )?)
    }

    /// Pools every learner's confusion matrix for `params`.
    fn dvw_contribution(&self, params: &ParameterSet) -> Result<ContributionValue, SimulationError> {
        let mut per_evaluator = Vec::with_capacity(self.n());
        for (v, data) in self.split.per_learner.iter().enumerate() {
            if data.validation.is_empty() {
                continue;
            }
            let cm = evaluate_confusion(params, &data.validation.features, &data.validation.labels)?;
            per_evaluator.push((v, cm));
        }
        Ok(dvw_weight(&EvalReport::new(per_evaluator)?)?)
    }

    fn models_per_request(&self) -> u64 {
        if self.cfg.scheme.is_dvw() {
            // send, one ship per other evaluator, pull
            self.n() as u64 + 1
        } else {
            2
        }
    }

    fn on_epoch_done(&mut self, k: usize) -> Result<(), SimulationError> {
        let data = &self.split.per_learner[k];
        let learner = &mut self.learners[k];
        learner.run_epoch(&data.train, &self.cfg.hyperparameters)?;
        let vloss = if learner.policy.is_adaptive() && !data.validation.is_empty() {
            Some(learner.validation_loss(&data.validation)?)
        } else {
            None
        };
        let decision = learner.end_epoch(vloss, self.controller.committed_steps())?;
        match decision {
            TriggerDecision::Continue => {
                let d = self.epoch_duration(k);
                self.queue.schedule(d, k, EventKind::EpochDone);
            }
            TriggerDecision::Trigger(_) => {
                let request = self.learners[k].make_request(data.train.len(), None)?;
                if self.cfg.scheme.is_sync() {
                    self.pending[k] = Some(Pending {
                        request,
                        contribution: None,
                    });
                    if self.pending.iter().all(Option::is_some) {
                        self.schedule_round(k)?;
                    }
                } else if self.cfg.scheme.is_dvw() {
                    let p = self.dvw_contribution(&request.params)?;
                    self.pending[k] = Some(Pending {
                        request,
                        contribution: Some(p),
                    });
                    let delay = self.cfg.model_latency + self.fan_out_duration(k);
                    self.queue.schedule(delay, k, EventKind::EvalDone);
                } else {
                    self.pending[k] = Some(Pending {
                        request,
                        contribution: None,
                    });
                    self.queue.schedule(self.cfg.model_latency, k, EventKind::UpdateCommit);
                }
            }
        }
        Ok(())
    }

    fn schedule_round(&mut self, last: usize) -> Result<(), SimulationError> {
        let mut eval = 0.0f64;
        if self.cfg.scheme.is_dvw() {
            for k in 0..self.n() {
                let params = self.pending[k].as_ref().expect("all ready").request.params.clone();
                let p = self.dvw_contribution(&params)?;
                self.pending[k].as_mut().expect("all ready").contribution = Some(p);
                eval = eval.max(self.fan_out_duration(k));
            }
            self.queue
                .schedule(self.cfg.model_latency + eval, last, EventKind::EvalDone);
        } else {
            self.queue
                .schedule(self.cfg.model_latency, last, EventKind::UpdateCommit);
        }
        Ok(())
    }

    fn contribution_for(&self, pending: &Pending) -> ContributionValue {
        pending
            .contribution
            .unwrap_or_else(|| fedavg_weight(pending.request.local_train_size))
    }

    fn commit_async(&mut self, k: usize) -> Result<(), SimulationError> {
        let pending = self.pending[k].take().expect("commit without a pending request");
        let committed_before = self.controller.committed_steps();
        let learner = &self.learners[k];
        let staleness = learner.effective_staleness(committed_before)?;
        let committed_at_fetch = learner.committed_at_fetch;
        let local_steps = pending.request.local_steps;
        let (model, p) = match self.cfg.scheme {
            Scheme::FedAsyncPoly => {
                let version_gap = self.controller.version() - learner.version_at_fetch;
                let alpha = self.cfg.fedasync.mixing_weight(version_gap);
                let model = self
                    .controller
                    .handle_fedasync_update(pending.request, version_gap, &self.cfg.fedasync)?;
                (model, alpha)
            }
            _ => {
                let p = self.contribution_for(&pending);
                (self.controller.handle_async_update(pending.request, p)?, p.value())
            }
        };
        self.requests += 1;
        self.models_exchanged += self.models_per_request();
        let acc = self.test_accuracy()?;
        let cause = self.learners[k].pending_trigger().map_or("fixed", |c| c.as_str());
        self.log.rows.push(MetricsRow {
            virtual_time: self.queue.now(),
            version: model.version,
            scheme: self.cfg.scheme.to_string(),
            test_top1: acc,
            committing_learner: Some(k),
            p_k: Some(p),
            staleness: Some(staleness),
            cause: cause.to_string(),
            models_exchanged_cum: self.models_exchanged,
            update_requests_cum: self.requests,
        });
        self.commits.push(CommitRecord {
            time: self.queue.now(),
            version: model.version,
            learner: k,
            local_steps,
            committed_at_fetch,
            committed_before,
            staleness,
        });
        self.learners[k].adopt_community(&model, staleness);
        self.check_version_cap(model.version);
        let d = self.cfg.model_latency + self.epoch_duration(k);
        self.queue.schedule(d, k, EventKind::EpochDone);
        Ok(())
    }

    fn commit_round(&mut self) -> Result<(), SimulationError> {
        let committed_before = self.controller.committed_steps();
        let mut round = Vec::with_capacity(self.n());
        let mut meta = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            let pending = self.pending[k].take().expect("round with missing learner");
            let p = self.contribution_for(&pending);
            let learner = &self.learners[k];
            let staleness = learner.effective_staleness(committed_before)?;
            meta.push((k, p, staleness, pending.request.local_steps, learner.committed_at_fetch));
            round.push((pending.request, p));
        }
        let model = self.controller.handle_sync_round(round)?;
        let acc = self.test_accuracy()?;
        let now = self.queue.now();
        for (k, p, staleness, local_steps, committed_at_fetch) in meta {
            self.requests += 1;
            self.models_exchanged += self.models_per_request();
            self.log.rows.push(MetricsRow {
                virtual_time: now,
                version: model.version,
                scheme: self.cfg.scheme.to_string(),
                test_top1: acc,
                committing_learner: Some(k),
                p_k: Some(p.value()),
                staleness: Some(staleness),
                cause: "fixed".to_string(),
                models_exchanged_cum: self.models_exchanged,
                update_requests_cum: self.requests,
            });
            self.commits.push(CommitRecord {
                time: now,
                version: model.version,
                learner: k,
                local_steps,
                committed_at_fetch,
                committed_before,
                staleness,
            });
            self.learners[k].adopt_community(&model, staleness);
        }
        self.check_version_cap(model.version);
        for k in 0..self.n() {
            let d = self.cfg.model_latency + self.epoch_duration(k);
            self.queue.schedule(d, k, EventKind::EpochDone);
        }
        Ok(())
    }

    fn check_version_cap(&mut self, version: u64) {
        if self.cfg.max_versions.is_some_and(|m| version >= m) {
            self.done = true;
        }
    }
}
