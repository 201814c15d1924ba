//! Federated partitioning: per-learner data sizes, class assignment and
//! stratified train/validation splits.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::rng::{stream, stream_rng};
use crate::simulator::SpeedGroup;

/// Class lists used by the power-law Non-IID experiments.
pub const NON_IID_PRESETS: &[(&str, &str)] = &[
    ("cifar10-powerlaw-5", "non-iid(8x1,7x1,6x1,5x7)"),
    ("cifar10-powerlaw-3", "non-iid(8x1,4x1,3x8)"),
    ("cifar100-powerlaw-50", "non-iid(84x1,76x1,68x1,64x1,55x1,50x5)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDistribution {
    Uniform,
    /// Geometric decay: learner `k` gets a share proportional to `decay^k`.
    Skewed {
        #[serde(default = "default_decay")]
        decay: f64,
    },
    /// Learner `k` (1-based) gets a share proportional to `k^-exponent`.
    Powerlaw {
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
}

fn default_decay() -> f64 {
    0.8
}

fn default_exponent() -> f64 {
    1.5
}

impl SizeDistribution {
    pub fn is_uniform(&self) -> bool {
        matches!(self, SizeDistribution::Uniform)
    }
}

/// Splits `total` samples across `num_learners`. The result sums to `total`
/// and is sorted in descending order.
pub fn compute_sizes(dist: &SizeDistribution, num_learners: usize, total: usize) -> Result<Vec<usize>, DataError> {
    if num_learners == 0 || total < num_learners {
        return Err(DataError::Infeasible(format!(
            "cannot split {total} samples across {num_learners} learners"
        )));
    }
    let sizes = match *dist {
        SizeDistribution::Uniform => {
            let base = total / num_learners;
            let rem = total % num_learners;
            (0..num_learners).map(|k| base + usize::from(k < rem)).collect()
        }
        SizeDistribution::Skewed { decay } => {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(DataError::Infeasible(format!("skew decay {decay} outside (0, 1]")));
            }
            let weights: Vec<f64> = (0..num_learners).map(|k| decay.powi(k as i32)).collect();
            largest_remainder(&weights, total)
        }
        SizeDistribution::Powerlaw { exponent } => {
            if !(exponent > 0.0) {
                return Err(DataError::Infeasible(format!(
                    "power-law exponent {exponent} must be positive"
                )));
            }
            let weights: Vec<f64> = (1..=num_learners).map(|k| (k as f64).powf(-exponent)).collect();
            largest_remainder(&weights, total)
        }
    };
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(DataError::Infeasible(format!(
            "learner rank {k} would receive no samples out of {total}"
        )));
    }
    Ok(sizes)
}

/// Proportional integer allocation. Leftover units go to the largest
/// fractional parts, ties to the lower index.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total - assigned) {
        sizes[k] += 1;
    }
    sizes
}

/// Classes held by each learner, indexed by size rank (rank 0 is the
/// largest learner).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAssignment {
    pub per_learner_classes: Vec<Vec<usize>>,
}

impl ClassAssignment {
    pub fn iid(num_learners: usize, num_classes: usize) -> Self {
        Self {
            per_learner_classes: vec![(0..num_classes).collect(); num_learners],
        }
    }

    /// Rank `k` with `x_k` classes takes `{(s_k + j) mod C : j < x_k}`
    /// where `s_k` is the running total of previous counts. With a constant
    /// `x` this is `{(k*x + j) mod C}`.
    pub fn rotation(counts: &[usize], num_classes: usize) -> Result<Self, DataError> {
        let mut start = 0usize;
        let mut lists = Vec::with_capacity(counts.len());
        for &x in counts {
            if x == 0 || x > num_classes {
                return Err(DataError::Infeasible(format!(
                    "cannot hold {x} of {num_classes} classes"
                )));
            }
            let mut classes: Vec<usize> = (0..x).map(|j| (start + j) % num_classes).collect();
            classes.sort_unstable();
            lists.push(classes);
            start += x;
        }
        Ok(Self {
            per_learner_classes: lists,
        })
    }

    pub fn non_iid(num_learners: usize, classes_per_learner: usize, num_classes: usize) -> Result<Self, DataError> {
        Self::rotation(&vec![classes_per_learner; num_learners], num_classes)
    }

    pub fn explicit(lists: Vec<Vec<usize>>, num_classes: usize) -> Result<Self, DataError> {
        for (k, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(DataError::Infeasible(format!("learner rank {k} holds no classes")));
            }
            if let Some(&c) = list.iter().find(|&&c| c >= num_classes) {
                return Err(DataError::Infeasible(format!(
                    "learner rank {k} lists class {c} but only {num_classes} exist"
                )));
            }
        }
        let per_learner_classes = lists
            .into_iter()
            .map(|mut l| {
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        Ok(Self { per_learner_classes })
    }

    pub fn num_learners(&self) -> usize {
        self.per_learner_classes.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.per_learner_classes.iter().map(Vec::len).collect()
    }
}

/// Textual class-distribution spec: `iid`, `non-iid(3)` or
/// `non-iid(8x1,7x1,6x1,5x7)` (count x repetitions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassSpec {
    Iid,
    NonIid(usize),
    Counts(Vec<(usize, usize)>),
}

impl ClassSpec {
    pub fn expand(&self, num_learners: usize, num_classes: usize) -> Result<ClassAssignment, DataError> {
        match self {
            ClassSpec::Iid => Ok(ClassAssignment::iid(num_learners, num_classes)),
            ClassSpec::NonIid(x) => ClassAssignment::non_iid(num_learners, *x, num_classes),
            ClassSpec::Counts(groups) => {
                let counts: Vec<usize> = groups
                    .iter()
                    .flat_map(|&(x, reps)| std::iter::repeat_n(x, reps))
                    .collect();
                if counts.len() != num_learners {
                    return Err(DataError::Infeasible(format!(
                        "class spec {self} describes {} learners, federation has {num_learners}",
                        counts.len()
                    )));
                }
                ClassAssignment::rotation(&counts, num_classes)
            }
        }
    }
}

impl fmt::Display for ClassSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassSpec::Iid => write!(f, "iid"),
            ClassSpec::NonIid(x) => write!(f, "non-iid({x})"),
            ClassSpec::Counts(groups) => {
                let parts: Vec<String> = groups.iter().map(|(x, r)| format!("{x}x{r}")).collect();
                write!(f, "non-iid({})", parts.join(","))
            }
        }
    }
}

impl FromStr for ClassSpec {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::Infeasible(format!("unrecognized class spec `{s}`"));
        let norm = s.trim().to_ascii_lowercase().replace(' ', "");
        if norm == "iid" {
            return Ok(ClassSpec::Iid);
        }
        if let Some(&(_, expanded)) = NON_IID_PRESETS.iter().find(|(name, _)| *name == norm) {
            return expanded.parse();
        }
        let inner = norm
            .strip_prefix("non-iid(")
            .or_else(|| norm.strip_prefix("noniid("))
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        if !inner.contains('x') {
            return inner.parse().map(ClassSpec::NonIid).map_err(|_| bad());
        }
        let groups = inner
            .split(',')
            .map(|g| {
                let (x, r) = g.split_once('x').ok_or_else(bad)?;
                Ok((x.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(ClassSpec::Counts(groups))
    }
}

/// Maps size rank to learner id: descending sizes go fast, slow, fast, ...
/// When all learners share one group the identity order is returned.
pub fn alternating_order(groups: &[SpeedGroup]) -> Vec<usize> {
    let fast: Vec<usize> = (0..groups.len()).filter(|&k| groups[k] == SpeedGroup::Fast).collect();
    let slow: Vec<usize> = (0..groups.len()).filter(|&k| groups[k] == SpeedGroup::Slow).collect();
    let mut order = Vec::with_capacity(groups.len());
    let (mut f, mut s) = (fast.iter(), slow.iter());
    loop {
        match (f.next(), s.next()) {
            (None, None) => break,
            (a, b) => order.extend(a.into_iter().chain(b)),
        }
    }
    order
}

/// Draws training samples for every learner.
///
/// Rank `r` receives `sizes[r]` samples spread evenly over
/// `assignment.per_learner_classes[r]` (remainder to the lowest classes),
/// and is placed at learner id `order[r]`. Samples are drawn without
/// replacement from a seed-shuffled queue per class. Returns source row
/// indices per learner id.
pub fn assign_classes(
    sizes: &[usize],
    assignment: &ClassAssignment,
    order: &[usize],
    pool: &Dataset,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    let n = sizes.len();
    if assignment.num_learners() != n || order.len() != n {
        return Err(DataError::Infeasible(format!(
            "{} sizes, {} class lists, {} learners",
            n,
            assignment.num_learners(),
            order.len()
        )));
    }
    let c = pool.num_classes;
    let demands: Vec<Vec<(usize, usize)>> = sizes
        .iter()
        .zip(&assignment.per_learner_classes)
        .map(|(&size, classes)| {
            let base = size / classes.len();
            let rem = size % classes.len();
            classes
                .iter()
                .enumerate()
                .map(|(j, &cls)| (cls, base + usize::from(j < rem)))
                .collect()
        })
        .collect();

    let mut queues = pool.indices_by_class();
    let mut need = vec![0usize; c];
    for d in demands.iter().flatten() {
        need[d.0] += d.1;
    }
    let shortfalls: Vec<String> = (0..c)
        .filter(|&cls| need[cls] > queues[cls].len())
        .map(|cls| format!("class {cls} short by {}", need[cls] - queues[cls].len()))
        .collect();
    if !shortfalls.is_empty() {
        return Err(DataError::Capacity(shortfalls.join(", ")));
    }

    let mut rng = stream_rng(seed, stream::CLASS_SHUFFLE);
    for q in queues.iter_mut() {
        q.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; c];
    let mut out = vec![Vec::new(); n];
    for (rank, demand) in demands.iter().enumerate() {
        let learner = order[rank];
        for &(cls, count) in demand {
            out[learner].extend_from_slice(&queues[cls][cursors[cls]..cursors[cls] + count]);
            cursors[cls] += count;
        }
        out[learner].sort_unstable();
    }
    Ok(out)
}

/// Number of validation samples taken from a class holding `n_c` samples.
pub fn validation_count(n_c: usize, fraction: f64) -> usize {
    if n_c < 2 {
        return 0;
    }
    let rounded = (fraction * n_c as f64 + 0.5).floor() as usize;
    rounded.clamp(1, n_c - 1)
}

/// Class-stratified split of row indices `0..labels.len()` into
/// `(train, validation)`.
pub fn stratified_split_indices(
    labels: &[usize],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if labels.is_empty() {
        return Err(DataError::Empty("local dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Infeasible(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = stream_rng(seed, stream::VALIDATION_SPLIT);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let v = validation_count(idx.len(), fraction);
        validation.extend_from_slice(&idx[..v]);
        train.extend_from_slice(&idx[v..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok((train, validation))
}

pub fn stratified_split(local: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let (train, validation) = stratified_split_indices(&local.labels, local.num_classes, fraction, seed)?;
    Ok((local.subset(&train), local.subset(&validation)))
}

/// One learner's private data.
#[derive(Debug, Clone)]
pub struct LearnerData {
    pub train: Dataset,
    pub validation: Dataset,
    /// Source rows (into the training pool) of `train`.
    pub train_rows: Vec<usize>,
    /// Source rows of `validation`.
    pub validation_rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FederatedSplit {
    pub per_learner: Vec<LearnerData>,
    pub test: Dataset,
}

impl FederatedSplit {
    /// Partitions `pool` across learners and carves a stratified validation
    /// holdout out of every local dataset.
    pub fn build(
        pool: &Dataset,
        test: Dataset,
        sizes: &[usize],
        assignment: &ClassAssignment,
        order: &[usize],
        validation_fraction: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        let rows = assign_classes(sizes, assignment, order, pool, seed)?;
        let mut per_learner = Vec::with_capacity(rows.len());
        for (k, local_rows) in rows.into_iter().enumerate() {
            let labels: Vec<usize> = local_rows.iter().map(|&i| pool.labels[i]).collect();
            let (train, validation) = stratified_split_indices(
                &labels,
                pool.num_classes,
                validation_fraction,
                seed.wrapping_add(k as u64),
            )?;
            let train_rows: Vec<usize> = train.iter().map(|&i| local_rows[i]).collect();
            let validation_rows: Vec<usize> = validation.iter().map(|&i| local_rows[i]).collect();
            per_learner.push(LearnerData {
                train: pool.subset(&train_rows),
                validation: pool.subset(&validation_rows),
                train_rows,
                validation_rows,
            });
        }
        Ok(Self { per_learner, test })
    }

    /// Union of every learner's validation holdout.
    pub fn distributed_validation_size(&self) -> usize {
        self.per_learner.iter().map(|l| l.validation.len()).sum()
    }
}
