use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SpeedGroup;

/// Cause string of the row describing the initial model.
pub const INIT_CAUSE: &str = "init";

/// One CSV row. Every commit produces one row; the first row of a log
/// describes the initial model at virtual time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub virtual_time: f64,
    pub version: u64,
    pub scheme: String,
    pub test_top1: f64,
    pub committing_learner: Option<usize>,
    pub p_k: Option<f64>,
    pub staleness: Option<u64>,
    pub cause: String,
    pub models_exchanged_cum: u64,
    pub update_requests_cum: u64,
}

impl MetricsRow {
    pub fn is_commit(&self) -> bool {
        self.cause != INIT_CAUSE
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn commits(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.is_commit())
    }

    pub fn update_requests(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.update_requests_cum)
    }

    pub fn models_exchanged(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.models_exchanged_cum)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.test_top1)
    }

    pub fn scheme(&self) -> Option<&str> {
        self.rows.first().map(|r| r.scheme.as_str())
    }

    /// Accuracy of the last row at or before `time`.
    pub fn accuracy_at_time(&self, time: f64) -> Option<f64> {
        self.rows
            .iter()
            .take_while(|r| r.virtual_time <= time)
            .last()
            .map(|r| r.test_top1)
    }

    /// Accuracy of the last row whose version is at most `version`.
    pub fn accuracy_at_version(&self, version: u64) -> Option<f64> {
        self.rows
            .iter()
            .take_while(|r| r.version <= version)
            .last()
            .map(|r| r.test_top1)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, csv::Error> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessStats {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub stdev: f64,
}

impl StalenessStats {
    pub fn of(values: &[u64]) -> Option<Self> {
        let median = crate::learner::lower_median(values)? as f64;
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: values.len(),
            median,
            mean,
            stdev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerStaleness {
    pub learner: usize,
    pub group: SpeedGroup,
    pub stats: Option<StalenessStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStaleness {
    pub group: SpeedGroup,
    pub stats: Option<StalenessStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessReport {
    pub learners: Vec<LearnerStaleness>,
    pub groups: Vec<GroupStaleness>,
}

/// Per-learner and per-group median, mean and population standard
/// deviation of per-commit effective staleness.
pub fn staleness_report(log: &MetricsLog, groups: &[SpeedGroup]) -> StalenessReport {
    let mut per_learner = vec![Vec::new(); groups.len()];
    for row in log.commits() {
        if let (Some(k), Some(s)) = (row.committing_learner, row.staleness) {
            if k < per_learner.len() {
                per_learner[k].push(s);
            }
        }
    }
    let learners = per_learner
        .iter()
        .enumerate()
        .map(|(k, v)| LearnerStaleness {
            learner: k,
            group: groups[k],
            stats: StalenessStats::of(v),
        })
        .collect();
    let mut present: Vec<SpeedGroup> = Vec::new();
    for g in groups {
        if !present.contains(g) {
            present.push(*g);
        }
    }
    let groups_out = present
        .into_iter()
        .map(|g| {
            let values: Vec<u64> = per_learner
                .iter()
                .zip(groups)
                .filter(|(_, lg)| **lg == g)
                .flat_map(|(v, _)| v.iter().copied())
                .collect();
            GroupStaleness {
                group: g,
                stats: StalenessStats::of(&values),
            }
        })
        .collect();
    StalenessReport {
        learners,
        groups: groups_out,
    }
}
