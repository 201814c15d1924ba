use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::data::{compute_sizes, ClassAssignment, ClassSpec, SizeDistribution};
use crate::learner::{Hyperparameters, TriggerPolicy};
use crate::nn::ModelKind;
use crate::simulator::{SpeedGroup, SpeedProfile};
use crate::weighting::{FedAsyncParams, Scheme};

pub const DEFAULT_SEED: u64 = 1990;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.05;

/// Declarative description of one experiment (or a grid of variants over
/// a shared data setup).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetConfig,
    pub num_learners: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub speed: SpeedConfig,
    #[serde(default = "default_size_distribution")]
    pub size_distribution: SizeDistribution,
    /// Samples handed to learners (training plus validation). Defaults to
    /// the whole training pool.
    #[serde(default)]
    pub total_samples: Option<usize>,
    #[serde(default)]
    pub class_distribution: ClassDistribution,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub trigger: TriggerPolicy,
    /// Trigger for slow-group learners; falls back to `trigger`.
    #[serde(default)]
    pub slow_trigger: Option<TriggerPolicy>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub fedasync: FedAsyncParams,
    #[serde(default)]
    pub proximal_mu: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Virtual-time budget; `null` leaves the run bounded by
    /// `max_versions` alone.
    #[serde(default = "default_time_budget")]
    pub time_budget: Option<f64>,
    #[serde(default)]
    pub max_versions: Option<u64>,
    #[serde(default)]
    pub model_latency: f64,
    #[serde(default)]
    pub summary: SummaryConfig,
    /// When non-empty, `run` executes every variant instead of the single
    /// `scheme`/`trigger` pair.
    #[serde(default)]
    pub variants: Vec<Variant>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_size_distribution() -> SizeDistribution {
    SizeDistribution::Uniform
}

fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

fn default_scheme() -> Scheme {
    Scheme::SyncFedAvg
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_time_budget() -> Option<f64> {
    Some(10_000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        dim: usize,
        num_classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model_kind")]
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden_dim: usize,
}

fn default_model_kind() -> ModelKind {
    ModelKind::SoftmaxRegression
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: default_model_kind(),
            hidden_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedConfig {
    Homogeneous {
        #[serde(default = "default_steps_per_second")]
        steps_per_second: f64,
        #[serde(default = "default_eval_rate")]
        eval_samples_per_second: f64,
    },
    /// The first `fast_count` learners are fast, the rest slow.
    TwoGroup {
        fast_count: usize,
        fast_steps_per_second: f64,
        slow_steps_per_second: f64,
        #[serde(default = "default_eval_rate")]
        fast_eval_samples_per_second: f64,
        #[serde(default = "default_eval_rate")]
        slow_eval_samples_per_second: f64,
    },
    Explicit {
        profiles: Vec<SpeedProfile>,
    },
}

fn default_steps_per_second() -> f64 {
    100.0
}

fn default_eval_rate() -> f64 {
    10_000.0
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig::Homogeneous {
            steps_per_second: default_steps_per_second(),
            eval_samples_per_second: default_eval_rate(),
        }
    }
}

impl SpeedConfig {
    pub fn profiles(&self, num_learners: usize) -> Result<Vec<SpeedProfile>, ConfigError> {
        let profiles = match self {
            SpeedConfig::Homogeneous {
                steps_per_second,
                eval_samples_per_second,
            } => vec![
                SpeedProfile {
                    steps_per_second: *steps_per_second,
                    eval_samples_per_second: *eval_samples_per_second,
                    group: SpeedGroup::Fast,
                };
                num_learners
            ],
            SpeedConfig::TwoGroup {
                fast_count,
                fast_steps_per_second,
                slow_steps_per_second,
                fast_eval_samples_per_second,
                slow_eval_samples_per_second,
            } => {
                if *fast_count > num_learners {
                    return Err(ConfigError::invalid(
                        "speed.fast_count",
                        format!("{fast_count} fast learners in a federation of {num_learners}"),
                    ));
                }
                (0..num_learners)
                    .map(|k| {
                        if k < *fast_count {
                            SpeedProfile {
                                steps_per_second: *fast_steps_per_second,
                                eval_samples_per_second: *fast_eval_samples_per_second,
                                group: SpeedGroup::Fast,
                            }
                        } else {
                            SpeedProfile {
                                steps_per_second: *slow_steps_per_second,
                                eval_samples_per_second: *slow_eval_samples_per_second,
                                group: SpeedGroup::Slow,
                            }
                        }
                    })
                    .collect()
            }
            SpeedConfig::Explicit { profiles } => {
                if profiles.len() != num_learners {
                    return Err(ConfigError::invalid(
                        "speed.profiles",
                        format!("{} profiles for {num_learners} learners", profiles.len()),
                    ));
                }
                profiles.clone()
            }
        };
        for (k, p) in profiles.iter().enumerate() {
            p.validate()
                .map_err(|m| ConfigError::invalid(format!("speed.profiles[{k}]"), m))?;
        }
        Ok(profiles)
    }
}

/// `"iid"`, `"non-iid(3)"`, `"non-iid(8x1,7x1,6x1,5x7)"`, a named preset,
/// or explicit per-rank class lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassDistribution {
    Spec(String),
    Explicit { explicit: Vec<Vec<usize>> },
}

impl Default for ClassDistribution {
    fn default() -> Self {
        ClassDistribution::Spec("iid".into())
    }
}

impl ClassDistribution {
    pub fn expand(&self, num_learners: usize, num_classes: usize) -> Result<ClassAssignment, ConfigError> {
        let field = "class_distribution";
        match self {
            ClassDistribution::Spec(s) => {
                let spec: ClassSpec = s.parse().map_err(|e| ConfigError::invalid(field, e))?;
                spec.expand(num_learners, num_classes)
                    .map_err(|e| ConfigError::invalid(field, e))
            }
            ClassDistribution::Explicit { explicit } => {
                if explicit.len() != num_learners {
                    return Err(ConfigError::invalid(
                        "class_distribution.explicit",
                        format!("{} class lists for {num_learners} learners", explicit.len()),
                    ));
                }
                ClassAssignment::explicit(explicit.clone(), num_classes)
                    .map_err(|e| ConfigError::invalid("class_distribution.explicit", e))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryConfig {
    /// Virtual-time cutoffs for Acc@T.
    #[serde(default)]
    pub acc_at_times: Vec<f64>,
    /// Version cutoffs for Acc@R.
    #[serde(default)]
    pub acc_at_rounds: Vec<u64>,
}

/// One cell of a scheme grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    pub scheme: Scheme,
    #[serde(default)]
    pub trigger: Option<TriggerPolicy>,
    #[serde(default)]
    pub slow_trigger: Option<TriggerPolicy>,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn minimal(dataset: DatasetConfig, num_learners: usize) -> Self {
        serde_json::from_value(serde_json::json!({
            "dataset": dataset,
            "num_learners": num_learners,
        }))
        .expect("defaults are valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The single-run view of variant `v`.
    pub fn with_variant(&self, v: &Variant) -> Self {
        let mut out = self.clone();
        out.name = format!("{}/{}", self.name, v.label);
        out.scheme = v.scheme;
        if let Some(t) = v.trigger {
            out.trigger = t;
        }
        out.slow_trigger = v
            .slow_trigger
            .or(if v.trigger.is_some() { None } else { self.slow_trigger });
        out.variants.clear();
        out
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Blobs { num_classes, .. } => Some(*num_classes),
            DatasetConfig::Idx { .. } => None,
        }
    }

    pub fn policies(&self, profiles: &[SpeedProfile]) -> Vec<TriggerPolicy> {
        profiles
            .iter()
            .map(|p| match (p.group, self.slow_trigger) {
                (SpeedGroup::Slow, Some(t)) => t,
                _ => self.trigger,
            })
            .collect()
    }

    /// Checks ranges and cross-field consistency. Data-dependent checks for
    /// IDX datasets happen when the files are loaded.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_learners == 0 {
            return Err(ConfigError::invalid("num_learners", "must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ConfigError::invalid(
                "validation_fraction",
                format!("{} is outside (0, 1)", self.validation_fraction),
            ));
        }
        if let DatasetConfig::Blobs {
            dim,
            num_classes,
            train_per_class,
            test_per_class,
            spread,
        } = self.dataset
        {
            if dim == 0 {
                return Err(ConfigError::invalid("dataset.dim", "must be at least 1"));
            }
            if num_classes < 2 {
                return Err(ConfigError::invalid("dataset.num_classes", "must be at least 2"));
            }
            if train_per_class == 0 || test_per_class == 0 {
                return Err(ConfigError::invalid(
                    "dataset",
                    "per-class sample counts must be positive",
                ));
            }
            if !(spread >= 0.0 && spread.is_finite()) {
                return Err(ConfigError::invalid("dataset.spread", format!("{spread} must be >= 0")));
            }
        }
        if self.model.kind == ModelKind::Mlp1Hidden && self.model.hidden_dim == 0 {
            return Err(ConfigError::invalid("model.hidden_dim", "an MLP needs hidden units"));
        }
        let profiles = self.speed.profiles(self.num_learners)?;
        self.check_policies(&profiles)?;
        for (i, v) in self.variants.iter().enumerate() {
            self.with_variant(v)
                .check_policies(&profiles)
                .map_err(|e| e.under(&format!("variants[{i}]")))?;
        }
        let h = &self.hyperparameters;
        if !(h.eta > 0.0) {
            return Err(ConfigError::invalid("hyperparameters.eta", "must be positive"));
        }
        if !(0.0..1.0).contains(&h.gamma) {
            return Err(ConfigError::invalid("hyperparameters.gamma", "must be in [0, 1)"));
        }
        if h.batch_size == 0 {
            return Err(ConfigError::invalid("hyperparameters.batch_size", "must be at least 1"));
        }
        self.fedasync
            .validate()
            .map_err(|e| ConfigError::invalid("fedasync", e))?;
        if !(self.proximal_mu >= 0.0) {
            return Err(ConfigError::invalid("proximal_mu", "must be >= 0"));
        }
        if let Some(t) = self.time_budget {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ConfigError::invalid(
                    "time_budget",
                    format!("{t} must be finite and >= 0"),
                ));
            }
        } else if self.max_versions.is_none() {
            return Err(ConfigError::invalid(
                "max_versions",
                "required when time_budget is unbounded",
            ));
        }
        if !(self.model_latency >= 0.0 && self.model_latency.is_finite()) {
            return Err(ConfigError::invalid("model_latency", "must be >= 0"));
        }
        if let Some(c) = self.num_classes() {
            let assignment = self.class_distribution.expand(self.num_learners, c)?;
            let per_class = match self.dataset {
                DatasetConfig::Blobs { train_per_class, .. } => train_per_class,
                DatasetConfig::Idx { .. } => unreachable!(),
            };
            let total = self.total_samples.unwrap_or(per_class * c);
            if total > per_class * c {
                return Err(ConfigError::invalid(
                    "total_samples",
                    format!("{total} exceeds the pool of {}", per_class * c),
                ));
            }
            let sizes = compute_sizes(&self.size_distribution, self.num_learners, total)
                .map_err(|e| ConfigError::invalid("size_distribution", e))?;
            check_supply(&sizes, &assignment, &vec![per_class; c])?;
        }
        Ok(())
    }

    fn check_policies(&self, profiles: &[SpeedProfile]) -> Result<(), ConfigError> {
        for (field, policy) in [("trigger", Some(self.trigger)), ("slow_trigger", self.slow_trigger)] {
            let Some(policy) = policy else { continue };
            policy.validate().map_err(|m| ConfigError::invalid(field, m))?;
            if self.scheme.is_sync() && policy.is_adaptive() {
                return Err(ConfigError::invalid(
                    field,
                    format!("scheme {} needs a fixed update frequency", self.scheme),
                ));
            }
        }
        let _ = profiles;
        Ok(())
    }
}

/// Rejects class demands that exceed per-class supply, naming the class.
pub(crate) fn check_supply(sizes: &[usize], assignment: &ClassAssignment, supply: &[usize]) -> Result<(), ConfigError> {
    let mut need = vec![0usize; supply.len()];
    for (&size, classes) in sizes.iter().zip(&assignment.per_learner_classes) {
        let base = size / classes.len();
        let rem = size % classes.len();
        for (j, &c) in classes.iter().enumerate() {
            need[c] += base + usize::from(j < rem);
        }
    }
    for (c, (&n, &s)) in need.iter().zip(supply).enumerate() {
        if n > s {
            return Err(ConfigError::invalid(
                "class_distribution",
                format!("class {c} needs {n} samples but only {s} exist (short by {})", n - s),
            ));
        }
    }
    Ok(())
}

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FEDSIM_SEED";

/// Replaces `config.seed` with `value` (the contents of [`SEED_ENV`]) when
/// present.
pub fn apply_seed_override(config: &mut ExperimentConfig, value: Option<&str>) -> Result<(), ConfigError> {
    if let Some(v) = value {
        config.seed = v
            .trim()
            .parse()
            .map_err(|_| ConfigError::invalid(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
    }
    Ok(())
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ExperimentConfig::from_json_str(&text)
}
