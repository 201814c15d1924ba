//! Config-driven experiment runner.

mod config;
mod presets;
mod runner;

use thiserror::Error;

pub use config::{
    apply_seed_override, parse_config, ClassDistribution, DatasetConfig, ExperimentConfig, ModelConfig, SpeedConfig,
    SummaryConfig, Variant, DEFAULT_SEED, DEFAULT_VALIDATION_FRACTION, SEED_ENV,
};
pub use presets::{preset, presets, Preset};
pub use runner::{
    compare, compare_files, dataset_digest, prepare, run, run_grid, run_to_dir, summarize, ComparisonRow,
    ComparisonTable, Cutoff, LearnerManifest, Prepared, RunManifest, RunResult, RunSummary, COMPARISON_FILE,
    MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("config error at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl ToString) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.to_string(),
        }
    }

    fn under(self, prefix: &str) -> Self {
        match self {
            ConfigError::Invalid { path, message } => ConfigError::Invalid {
                path: format!("{prefix}.{path}"),
                message,
            },
            other => other,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] crate::data::DataError),
    #[error("simulation: {0}")]
    Simulation(#[from] crate::simulator::SimulationError),
    #[error("{context}: {message}")]
    Io { context: String, message: String },
    #[error("cannot compare runs: {0}")]
    Compare(String),
}

impl RunError {
    pub(crate) fn io(context: impl Into<String>, e: impl ToString) -> Self {
        RunError::Io {
            context: context.into(),
            message: e.to_string(),
        }
    }

    /// True for errors caused by the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            RunError::Config(_) | RunError::Simulation(crate::simulator::SimulationError::Config(_))
        )
    }
}
