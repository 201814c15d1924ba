use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{check_supply, DatasetConfig, ExperimentConfig};
use super::{ConfigError, RunError};
use crate::data::{
    alternating_order, compute_sizes, generate_blobs, generate_blobs_test, load_idx, ClassAssignment, Dataset,
    FederatedSplit,
};
use crate::nn::{ModelKind, ModelSpec};
use crate::simulator::{
    run_simulation, staleness_report, MetricsLog, SimulationConfig, SimulationOutcome, SpeedGroup, StalenessReport,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Data split and simulator setup derived from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub split: FederatedSplit,
    pub simulation: SimulationConfig,
    /// Local dataset size by size rank.
    pub sizes: Vec<usize>,
    pub assignment: ClassAssignment,
    /// Learner id of each size rank.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub at: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub scheme: String,
    pub seed: u64,
    pub final_accuracy: f64,
    pub final_version: u64,
    pub final_time: f64,
    pub update_requests: u64,
    pub models_exchanged: u64,
    pub dvw_evaluation_models: u64,
    pub acc_at_times: Vec<Cutoff>,
    pub acc_at_rounds: Vec<Cutoff>,
    pub staleness: StalenessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerManifest {
    pub learner: usize,
    pub group: SpeedGroup,
    pub train_histogram: Vec<usize>,
    pub validation_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub code_version: String,
    /// Resolved config; rerunning it reproduces `metrics.csv`.
    pub config: ExperimentConfig,
    pub learners: Vec<LearnerManifest>,
    pub test_histogram: Vec<usize>,
    pub test_digest: String,
    pub metrics_sha256: String,
    pub events_processed: u64,
    pub wall_seconds: f64,
    pub virtual_duration: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: Option<String>,
    pub log: MetricsLog,
    pub summary: RunSummary,
    pub manifest: RunManifest,
    pub outcome: SimulationOutcome,
}

impl RunResult {
    pub fn csv(&self) -> String {
        self.log.to_csv_string()
    }
}

fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset), RunError> {
    match &config.dataset {
        &DatasetConfig::Blobs {
            dim,
            num_classes,
            train_per_class,
            test_per_class,
            spread,
        } => Ok((
            generate_blobs(dim, num_classes, train_per_class, spread, config.seed),
            generate_blobs_test(dim, num_classes, test_per_class, spread, config.seed),
        )),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.dim() != test.dim() {
                return Err(ConfigError::invalid(
                    "dataset",
                    format!("train images have {} features, test images {}", train.dim(), test.dim()),
                )
                .into());
            }
            let c = train.num_classes.max(test.num_classes);
            Ok((
                Dataset::new(train.features, train.labels, c)?,
                Dataset::new(test.features, test.labels, c)?,
            ))
        }
    }
}

/// Loads or generates data, partitions it and resolves the simulator setup.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, RunError> {
    config.validate()?;
    let (pool, test) = load_data(config)?;
    let n = config.num_learners;
    let c = pool.num_classes;
    let profiles = config.speed.profiles(n)?;
    let groups: Vec<SpeedGroup> = profiles.iter().map(|p| p.group).collect();
    let order = alternating_order(&groups);
    let total = config.total_samples.unwrap_or(pool.len());
    if total > pool.len() {
        return Err(
            ConfigError::invalid("total_samples", format!("{total} exceeds the pool of {}", pool.len())).into(),
        );
    }
    let sizes =
        compute_sizes(&config.size_distribution, n, total).map_err(|e| ConfigError::invalid("size_distribution", e))?;
    let assignment = config.class_distribution.expand(n, c)?;
    check_supply(&sizes, &assignment, &pool.class_histogram().0)?;
    let split = FederatedSplit::build(
        &pool,
        test,
        &sizes,
        &assignment,
        &order,
        config.validation_fraction,
        config.seed,
    )?;
    let model = match config.model.kind {
        ModelKind::SoftmaxRegression => ModelSpec::softmax(pool.dim(), c, config.seed),
        ModelKind::Mlp1Hidden => ModelSpec::mlp(pool.dim(), config.model.hidden_dim, c, config.seed),
    };
    let simulation = SimulationConfig {
        scheme: config.scheme,
        model,
        hyperparameters: config.hyperparameters,
        policies: config.policies(&profiles),
        profiles,
        fedasync: config.fedasync,
        proximal_mu: config.proximal_mu,
        seed: config.seed,
        time_budget: config.time_budget.unwrap_or(f64::INFINITY),
        max_versions: config.max_versions,
        model_latency: config.model_latency,
    };
    Ok(Prepared {
        config: config.clone(),
        split,
        simulation,
        sizes,
        assignment,
        order,
    })
}

impl Prepared {
    /// Same data, different scheme and triggers.
    fn for_config(&self, config: &ExperimentConfig) -> Prepared {
        let mut out = self.clone();
        out.simulation.scheme = config.scheme;
        out.simulation.policies = config.policies(&self.simulation.profiles);
        out.config = config.clone();
        out
    }

    pub fn execute(&self, label: Option<String>) -> Result<RunResult, RunError> {
        let started = Instant::now();
        let outcome = run_simulation(&self.simulation, &self.split)?;
        let wall_seconds = started.elapsed().as_secs_f64();
        let log = outcome.log.clone();
        let summary = summarize(&self.config, &log, &self.simulation.groups());
        let csv = log.to_csv_string();
        let manifest = RunManifest {
            name: self.config.name.clone(),
            code_version: format!("fedsim-core {}", env!("CARGO_PKG_VERSION")),
            config: self.config.clone(),
            learners: self
                .split
                .per_learner
                .iter()
                .enumerate()
                .map(|(k, l)| LearnerManifest {
                    learner: k,
                    group: self.simulation.profiles[k].group,
                    train_histogram: l.train.class_histogram().0,
                    validation_histogram: l.validation.class_histogram().0,
                })
                .collect(),
            test_histogram: self.split.test.class_histogram().0,
            test_digest: dataset_digest(&self.split.test),
            metrics_sha256: hex::encode(Sha256::digest(csv.as_bytes())),
            events_processed: outcome.events_processed,
            wall_seconds,
            virtual_duration: log.rows.last().map_or(0.0, |r| r.virtual_time),
        };
        Ok(RunResult {
            label,
            log,
            summary,
            manifest,
            outcome,
        })
    }
}

/// SHA-256 over a dataset's class count, labels and feature bits.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.num_classes as u64).to_le_bytes());
    h.update((data.dim() as u64).to_le_bytes());
    for &l in &data.labels {
        h.update((l as u64).to_le_bytes());
    }
    for &x in data.features.values() {
        h.update(x.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn summarize(config: &ExperimentConfig, log: &MetricsLog, groups: &[SpeedGroup]) -> RunSummary {
    let last = log.rows.last();
    let requests = log.update_requests();
    let exchanged = log.models_exchanged();
    RunSummary {
        name: config.name.clone(),
        scheme: config.scheme.to_string(),
        seed: config.seed,
        final_accuracy: log.final_accuracy().unwrap_or(f64::NAN),
        final_version: last.map_or(0, |r| r.version),
        final_time: last.map_or(0.0, |r| r.virtual_time),
        update_requests: requests,
        models_exchanged: exchanged,
        dvw_evaluation_models: dvw_evaluation_models(config.scheme.is_dvw(), requests, exchanged),
        acc_at_times: config
            .summary
            .acc_at_times
            .iter()
            .map(|&t| Cutoff {
                at: t,
                accuracy: log.accuracy_at_time(t).unwrap_or(f64::NAN),
            })
            .collect(),
        acc_at_rounds: config
            .summary
            .acc_at_rounds
            .iter()
            .map(|&r| Cutoff {
                at: r as f64,
                accuracy: log.accuracy_at_version(r).unwrap_or(f64::NAN),
            })
            .collect(),
        staleness: staleness_report(log, groups),
    }
}

/// Models shipped for distributed validation on top of the upload and
/// download of every request.
fn dvw_evaluation_models(is_dvw: bool, requests: u64, exchanged: u64) -> u64 {
    if is_dvw {
        exchanged.saturating_sub(2 * requests)
    } else {
        0
    }
}

/// Runs `config` as a single experiment, ignoring `variants`.
pub fn run(config: &ExperimentConfig) -> Result<RunResult, RunError> {
    prepare(config)?.execute(None)
}

/// Runs every variant (or the single configured scheme) over one shared
/// data split. Cells run on separate threads; each is single-threaded.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<RunResult>, RunError> {
    let prepared = prepare(config)?;
    if config.variants.is_empty() {
        return Ok(vec![prepared.execute(None)?]);
    }
    let cells: Vec<(String, Prepared)> = config
        .variants
        .iter()
        .map(|v| (v.label.clone(), prepared.for_config(&config.with_variant(v))))
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|(label, p)| s.spawn(move || p.execute(Some(label.clone()))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("grid cell panicked"))
            .collect()
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|e| RunError::io(format!("writing {}", path.display()), e))
}

fn write_run(dir: &Path, result: &RunResult) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(format!("creating {}", dir.display()), e))?;
    write_file(&dir.join(METRICS_FILE), &result.csv())?;
    write_file(&dir.join(MANIFEST_FILE), &pretty_json(&result.manifest))?;
    write_file(&dir.join(SUMMARY_FILE), &pretty_json(&result.summary))?;
    Ok(())
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Runs the config (or its grid) and writes `metrics.csv`, `manifest.json`
/// and `summary.json` under `out` (one subdirectory per variant, plus a
/// `comparison.csv` for grids).
pub fn run_to_dir(config: &ExperimentConfig, out: impl AsRef<Path>) -> Result<Vec<RunResult>, RunError> {
    let out = out.as_ref();
    let results = run_grid(config)?;
    if config.variants.is_empty() {
        write_run(out, &results[0])?;
    } else {
        for r in &results {
            write_run(&out.join(r.label.as_deref().expect("grid cells are labelled")), r)?;
        }
        let runs: Vec<(String, MetricsLog)> = results
            .iter()
            .map(|r| (r.label.clone().unwrap_or_default(), r.log.clone()))
            .collect();
        let table = compare(&runs, &config.summary.acc_at_times)?;
        write_file(&out.join(COMPARISON_FILE), &table.to_csv_string())?;
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub scheme: String,
    pub final_accuracy: f64,
    pub final_version: u64,
    pub acc_at_times: Vec<Cutoff>,
    pub update_requests: u64,
    pub models_exchanged: u64,
    pub dvw_evaluation_models: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub cutoffs: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side summary of at least two runs over the same test set.
pub fn compare(runs: &[(String, MetricsLog)], cutoffs: &[f64]) -> Result<ComparisonTable, RunError> {
    if runs.len() < 2 {
        return Err(RunError::Compare(format!("need at least 2 runs, got {}", runs.len())));
    }
    let rows = runs
        .iter()
        .map(|(name, log)| {
            let scheme = log.scheme().unwrap_or("").to_string();
            let is_dvw = scheme.parse::<crate::weighting::Scheme>().is_ok_and(|s| s.is_dvw());
            ComparisonRow {
                run: name.clone(),
                final_accuracy: log.final_accuracy().unwrap_or(f64::NAN),
                final_version: log.rows.last().map_or(0, |r| r.version),
                acc_at_times: cutoffs
                    .iter()
                    .map(|&t| Cutoff {
                        at: t,
                        accuracy: log.accuracy_at_time(t).unwrap_or(f64::NAN),
                    })
                    .collect(),
                update_requests: log.update_requests(),
                models_exchanged: log.models_exchanged(),
                dvw_evaluation_models: dvw_evaluation_models(is_dvw, log.update_requests(), log.models_exchanged()),
                scheme,
            }
        })
        .collect();
    Ok(ComparisonTable {
        cutoffs: cutoffs.to_vec(),
        rows,
    })
}

/// Reads metrics CSVs and compares them. When a `manifest.json` sits next
/// to a CSV its test-set digest must agree with every other one found.
pub fn compare_files(paths: &[PathBuf], cutoffs: &[f64]) -> Result<ComparisonTable, RunError> {
    let mut runs = Vec::with_capacity(paths.len());
    let mut digest: Option<(String, &Path)> = None;
    for path in paths {
        let log =
            MetricsLog::read_csv_path(path).map_err(|e| RunError::io(format!("reading {}", path.display()), e))?;
        let manifest_path = path.with_file_name(MANIFEST_FILE);
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path)
                .map_err(|e| RunError::io(format!("reading {}", manifest_path.display()), e))?;
            let manifest: RunManifest = serde_json::from_str(&text)
                .map_err(|e| RunError::io(format!("parsing {}", manifest_path.display()), e))?;
            match &digest {
                Some((d, first)) if *d != manifest.test_digest => {
                    return Err(RunError::Compare(format!(
                        "{} and {} were evaluated on different test sets",
                        first.display(),
                        path.display()
                    )));
                }
                Some(_) => {}
                None => digest = Some((manifest.test_digest, path.as_path())),
            }
        }
        runs.push((run_name(path), log));
    }
    compare(&runs, cutoffs)
}

fn run_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match path.parent().and_then(Path::file_name) {
        Some(dir) if stem == "metrics" => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

impl ComparisonTable {
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["run", "scheme", "final_accuracy", "final_version"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.cutoffs.iter().map(|t| format!("acc_at_{t}")));
        header.extend(
            ["update_requests", "models_exchanged", "dvw_evaluation_models"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header).expect("in-memory csv");
        for r in &self.rows {
            let mut rec = vec![
                r.run.clone(),
                r.scheme.clone(),
                r.final_accuracy.to_string(),
                r.final_version.to_string(),
            ];
            rec.extend(r.acc_at_times.iter().map(|c| c.accuracy.to_string()));
            rec.extend([
                r.update_requests.to_string(),
                r.models_exchanged.to_string(),
                r.dvw_evaluation_models.to_string(),
            ]);
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut header = vec!["run".to_string(), "scheme".into(), "final_acc".into(), "version".into()];
        header.extend(self.cutoffs.iter().map(|t| format!("acc@{t}")));
        header.extend(["requests".into(), "models".into(), "dvw_evals".into()]);
        let mut table = vec![header];
        for r in &self.rows {
            let mut line = vec![
                r.run.clone(),
                r.scheme.clone(),
                format!("{:.4}", r.final_accuracy),
                r.final_version.to_string(),
            ];
            line.extend(r.acc_at_times.iter().map(|c| format!("{:.4}", c.accuracy)));
            line.extend([
                r.update_requests.to_string(),
                r.models_exchanged.to_string(),
                r.dvw_evaluation_models.to_string(),
            ]);
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|i| table.iter().map(|row| row[i].len()).max().unwrap_or(0))
            .collect();
        for row in &table {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            writeln!(f, "{}", cells.join("  ").trim_end())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::DatasetConfig;
    use crate::weighting::Scheme;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::minimal(
            DatasetConfig::Blobs {
                dim: 4,
                num_classes: 3,
                train_per_class: 60,
                test_per_class: 20,
                spread: 0.5,
            },
            3,
        );
        c.time_budget = Some(20.0);
        c.summary.acc_at_times = vec![0.0, 10.0];
        c.summary.acc_at_rounds = vec![0, 2];
        c
    }

    #[test]
    fn single_run_is_deterministic() {
        let a = run(&tiny()).unwrap();
        let b = run(&tiny()).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(a.manifest.metrics_sha256, b.manifest.metrics_sha256);
        assert!(a.summary.update_requests > 0);
        assert_eq!(a.summary.models_exchanged, 2 * a.summary.update_requests);
        assert_eq!(a.summary.acc_at_times[0].accuracy, a.log.rows[0].test_top1);
    }

    #[test]
    fn manifest_reproduces_run() {
        let first = run(&tiny()).unwrap();
        let again = run(&first.manifest.config).unwrap();
        assert_eq!(first.csv(), again.csv());
    }

    #[test]
    fn grid_writes_every_cell() {
        let mut c = tiny();
        c.variants = vec![
            super::super::Variant {
                label: "a".into(),
                scheme: Scheme::SyncFedAvg,
                trigger: None,
                slow_trigger: None,
            },
            super::super::Variant {
                label: "b".into(),
                scheme: Scheme::AsyncDvw,
                trigger: None,
                slow_trigger: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let results = run_to_dir(&c, dir.path()).unwrap();
        assert_eq!(results.len(), 2);
        for l in ["a", "b"] {
            assert!(dir.path().join(l).join(METRICS_FILE).exists());
            assert!(dir.path().join(l).join(MANIFEST_FILE).exists());
        }
        let table = compare_files(
            &[
                dir.path().join("a").join(METRICS_FILE),
                dir.path().join("b").join(METRICS_FILE),
            ],
            &[10.0],
        )
        .unwrap();
        assert_eq!(table.rows[0].run, "a");
        assert_eq!(table.rows[1].models_exchanged, 4 * table.rows[1].update_requests);
        assert_eq!(table.rows[1].dvw_evaluation_models, 2 * table.rows[1].update_requests);
    }

    #[test]
    fn compare_rejects_other_test_set() {
        let dir = tempfile::tempdir().unwrap();
        let mut other = tiny();
        other.seed += 1;
        run_to_dir(&tiny(), dir.path().join("x")).unwrap();
        run_to_dir(&other, dir.path().join("y")).unwrap();
        let err = compare_files(
            &[
                dir.path().join("x").join(METRICS_FILE),
                dir.path().join("y").join(METRICS_FILE),
            ],
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, RunError::Compare(_)), "{err}");
    }

    #[test]
    fn compare_needs_two_runs() {
        assert!(compare(&[("x".into(), MetricsLog::default())], &[]).is_err());
    }
}
