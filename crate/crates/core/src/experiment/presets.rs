use super::config::{ClassDistribution, DatasetConfig, ExperimentConfig, SpeedConfig, SummaryConfig, Variant};
use super::ConfigError;
use crate::data::SizeDistribution;
use crate::learner::TriggerPolicy;
use crate::weighting::Scheme;

/// A named, ready-to-run configuration.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub description: &'static str,
    pub config: ExperimentConfig,
}

const FAST_SPEED: f64 = 50.0;
const SLOW_SPEED: f64 = 10.0;

fn blobs(train_per_class: usize) -> DatasetConfig {
    DatasetConfig::Blobs {
        dim: 8,
        num_classes: 4,
        train_per_class,
        test_per_class: 500,
        spread: 0.6,
    }
}

fn two_group() -> SpeedConfig {
    SpeedConfig::TwoGroup {
        fast_count: 5,
        fast_steps_per_second: FAST_SPEED,
        slow_steps_per_second: SLOW_SPEED,
        fast_eval_samples_per_second: 20_000.0,
        slow_eval_samples_per_second: 4_000.0,
    }
}

fn variant(label: &str, scheme: Scheme, trigger: Option<TriggerPolicy>, slow: Option<TriggerPolicy>) -> Variant {
    Variant {
        label: label.into(),
        scheme,
        trigger,
        slow_trigger: slow,
    }
}

/// Adaptive triggers: fast learners tolerate four non-improving epochs,
/// slow learners one.
fn adaptive_pair() -> (TriggerPolicy, TriggerPolicy) {
    (TriggerPolicy::adaptive(0.0, 4), TriggerPolicy::adaptive(0.0, 1))
}

fn scheme_grid() -> Vec<Variant> {
    let (fast, slow) = adaptive_pair();
    vec![
        variant("sync_fedavg", Scheme::SyncFedAvg, None, None),
        variant("async_fedavg", Scheme::AsyncFedAvg, None, None),
        variant("sync_dvw", Scheme::SyncDvw, None, None),
        variant("async_dvw", Scheme::AsyncDvw, Some(fast), Some(slow)),
        variant("fedasync_poly", Scheme::FedAsyncPoly, None, None),
    ]
}

fn heterogeneous(name: &str, size: SizeDistribution, classes: &str, budget: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::minimal(blobs(1500), 10);
    c.name = name.into();
    c.total_samples = Some(4000);
    c.size_distribution = size;
    c.class_distribution = ClassDistribution::Spec(classes.into());
    c.speed = two_group();
    c.time_budget = Some(budget);
    c.summary = SummaryConfig {
        acc_at_times: vec![budget / 4.0, budget / 2.0, budget],
        acc_at_rounds: vec![50, 100, 200],
    };
    c.variants = scheme_grid();
    c
}

fn build() -> Vec<Preset> {
    let mut out = Vec::new();

    let mut iid = ExperimentConfig::minimal(blobs(1000), 10);
    iid.name = "blobs-iid-uniform".into();
    iid.max_versions = Some(50);
    iid.time_budget = None;
    iid.summary = SummaryConfig {
        acc_at_times: vec![],
        acc_at_rounds: vec![10, 25, 50],
    };
    out.push(Preset {
        name: "blobs-iid-uniform".into(),
        description: "10 identical learners, uniform IID blobs, sync FedAvg for 50 rounds",
        config: iid,
    });

    out.push(Preset {
        name: "blobs-powerlaw-noniid".into(),
        description: "power-law sizes, 2 of 4 classes per learner, 5 fast + 5 slow; every scheme",
        config: heterogeneous(
            "blobs-powerlaw-noniid",
            SizeDistribution::Powerlaw { exponent: 1.5 },
            "non-iid(2)",
            200.0,
        ),
    });

    let mut triggers = heterogeneous(
        "blobs-powerlaw-noniid-triggers",
        SizeDistribution::Powerlaw { exponent: 1.5 },
        "non-iid(2)",
        200.0,
    );
    let (fast, slow) = adaptive_pair();
    triggers.variants = vec![
        variant(
            "async_dvw_fixed",
            Scheme::AsyncDvw,
            Some(TriggerPolicy::default()),
            None,
        ),
        variant("async_dvw_adaptive", Scheme::AsyncDvw, Some(fast), Some(slow)),
    ];
    out.push(Preset {
        name: "blobs-powerlaw-noniid-triggers".into(),
        description: "the power-law Non-IID setup, async DVW with fixed vs adaptive triggers",
        config: triggers,
    });

    for (size_name, size) in [
        ("uniform", SizeDistribution::Uniform),
        ("skewed", SizeDistribution::Skewed { decay: 0.8 }),
        ("powerlaw", SizeDistribution::Powerlaw { exponent: 1.5 }),
    ] {
        for (dist_name, classes) in [("iid", "iid"), ("noniid", "non-iid(2)")] {
            let name = format!("grid-{size_name}-{dist_name}");
            out.push(Preset {
                name: name.clone(),
                description: "distribution grid cell: every scheme under one size/class setup",
                config: heterogeneous(&name, size, classes, 100.0),
            });
        }
    }
    out
}

pub fn presets() -> Vec<Preset> {
    build()
}

pub fn preset(name: &str) -> Result<Preset, ConfigError> {
    build()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| ConfigError::UnknownPreset(name.into()))
}
