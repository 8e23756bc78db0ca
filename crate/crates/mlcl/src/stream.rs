//! Multi-label task streams.
//!
//! A stream is an ordered sequence of tasks with pairwise-disjoint class
//! sets. Each task carries train and test examples whose label sets use
//! global class indices; scenario-dependent label projection happens at
//! consumption time, never at storage time, so complete labels stay
//! available for oracle statistics.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

/// One unit of the data stream: a feature vector plus a non-empty set of
/// global class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub labels: BTreeSet<usize>,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, labels: BTreeSet<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("example has an empty label set".into()));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("example has non-finite features".into()));
        }
        Ok(LabeledExample { features, labels })
    }
}

/// Label-masking scenario: `Il` trains on new classes only (past labels
/// stripped), `Cl` trains on all seen classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Il,
    Cl,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Il => write!(f, "IL"),
            Scenario::Cl => write!(f, "CL"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "IL" | "il" => Ok(Scenario::Il),
            "CL" | "cl" => Ok(Scenario::Cl),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// The classes introduced by one task, in a fixed order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub index: usize,
    pub classes: Vec<usize>,
}

/// An ordered multi-label task stream with per-task train/test splits.
///
/// Class bookkeeping uses the "seen order": positions in model outputs and
/// correlation matrices follow task order, concatenating each task's class
/// list. `seen_classes(t)` gives that ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub scenario: Scenario,
    pub tasks: Vec<TaskSpec>,
    pub train: Vec<Vec<LabeledExample>>,
    pub test: Vec<Vec<LabeledExample>>,
    pub feature_dim: usize,
}

impl TaskStream {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Global class indices seen through task `t` (0-based), in seen order.
    pub fn seen_classes(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t]
            .iter()
            .flat_map(|task| task.classes.iter().copied())
            .collect()
    }

    pub fn seen_count(&self, t: usize) -> usize {
        self.tasks[..=t].iter().map(|task| task.classes.len()).sum()
    }

    pub fn total_classes(&self) -> usize {
        self.seen_count(self.tasks.len() - 1)
    }

    /// Training target for an example assigned to task `t`.
    ///
    /// `Cl`: binary vector over all seen classes (old labels retained).
    /// `Il`: binary vector over the task's own classes only.
    pub fn project_train(&self, ex: &LabeledExample, t: usize) -> Vec<f64> {
        match self.scenario {
            Scenario::Cl => self
                .seen_classes(t)
                .iter()
                .map(|c| if ex.labels.contains(c) { 1.0 } else { 0.0 })
                .collect(),
            Scenario::Il => self.tasks[t]
                .classes
                .iter()
                .map(|c| if ex.labels.contains(c) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Test ground truth is always over all classes seen through task `t`.
    pub fn project_test(&self, ex: &LabeledExample, t: usize) -> Vec<f64> {
        self.seen_classes(t)
            .iter()
            .map(|c| if ex.labels.contains(c) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Ground truth for synthetic streams: per-class marginals, symmetric
/// pairwise joint probabilities (unit diagonal by convention), one feature
/// prototype per class, and a Gaussian noise scale.
#[derive(Clone, Debug)]
pub struct CooccurrenceSpec {
    pub marginals: Vec<f64>,
    pub pairwise: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<f64>>,
    pub noise: f64,
}

impl CooccurrenceSpec {
    pub fn class_count(&self) -> usize {
        self.marginals.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.first().map_or(0, |p| p.len())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.class_count();
        if c == 0 {
            return Err(Error::Config("co-occurrence spec has no classes".into()));
        }
        if self.marginals.iter().all(|&p| p == 0.0) {
            return Err(Error::Config("all marginals are zero".into()));
        }
        if self.marginals.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("marginals must lie in [0, 1]".into()));
        }
        if self.pairwise.len() != c || self.pairwise.iter().any(|r| r.len() != c) {
            return Err(Error::Config("pairwise matrix must be CxC".into()));
        }
        for i in 0..c {
            for j in 0..c {
                let p = self.pairwise[i][j];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!(
                        "pairwise[{i}][{j}] = {p} outside [0, 1]"
                    )));
                }
                if (p - self.pairwise[j][i]).abs() > 1e-12 {
                    return Err(Error::Config("pairwise matrix must be symmetric".into()));
                }
            }
        }
        if self.prototypes.len() != c {
            return Err(Error::Config("one prototype per class required".into()));
        }
        let d = self.feature_dim();
        if d == 0 || self.prototypes.iter().any(|p| p.len() != d) {
            return Err(Error::Config("prototypes must share a positive length".into()));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config("noise scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Convenience constructor: uniform marginal, a base joint probability
    /// for every pair, and per-class axis-aligned prototypes.
    pub fn uniform(
        classes: usize,
        feature_dim: usize,
        marginal: f64,
        pair_base: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_01);
        let mut pairwise = vec![vec![pair_base; classes]; classes];
        for (i, row) in pairwise.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let prototypes = (0..classes)
            .map(|_| (0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        CooccurrenceSpec {
            marginals: vec![marginal; classes],
            pairwise,
            prototypes,
            noise,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Draws `n` examples whose empirical marginals and pairwise co-occurrences
/// converge to the spec. Marginal counts are allocated exactly up front;
/// ten correction sweeps then move labels between examples (marginal-
/// preserving swaps) until each pair's joint count meets its target.
/// Deterministic for a fixed seed.
pub fn generate_synthetic(
    spec: &CooccurrenceSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("cannot generate an empty dataset".into()));
    }
    let c = spec.class_count();
    let d = spec.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Exact marginal allocation.
    let mut labels = vec![vec![false; c]; n];
    for class in 0..c {
        let count = (spec.marginals[class] * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &e in order.iter().take(count.min(n)) {
            labels[e][class] = true;
        }
    }

    // Pair-correction sweeps. Swapping a label between two examples keeps
    // every marginal fixed while moving one pair's joint count by one.
    for _ in 0..10 {
        for i in 0..c {
            for j in (i + 1)..c {
                let feasible_max = spec.marginals[i].min(spec.marginals[j]);
                let feasible_min = (spec.marginals[i] + spec.marginals[j] - 1.0).max(0.0);
                let target_p = spec.pairwise[i][j].clamp(feasible_min, feasible_max);
                let target = (target_p * n as f64).round() as isize;
                let current = labels.iter().filter(|l| l[i] && l[j]).count() as isize;
                if current < target {
                    // Give j to examples holding only i, taking it from
                    // examples holding only j.
                    let mut donors: Vec<usize> =
                        (0..n).filter(|&e| !labels[e][i] && labels[e][j]).collect();
                    let mut takers: Vec<usize> =
                        (0..n).filter(|&e| labels[e][i] && !labels[e][j]).collect();
                    donors.shuffle(&mut rng);
                    takers.shuffle(&mut rng);
                    let moves = ((target - current) as usize).min(donors.len()).min(takers.len());
                    for k in 0..moves {
                        labels[donors[k]][j] = false;
                        labels[takers[k]][j] = true;
                    }
                } else if current > target {
                    let mut donors: Vec<usize> =
                        (0..n).filter(|&e| labels[e][i] && labels[e][j]).collect();
                    let mut takers: Vec<usize> =
                        (0..n).filter(|&e| !labels[e][i] && !labels[e][j]).collect();
                    donors.shuffle(&mut rng);
                    takers.shuffle(&mut rng);
                    let moves = ((current - target) as usize).min(donors.len()).min(takers.len());
                    for k in 0..moves {
                        labels[donors[k]][j] = false;
                        labels[takers[k]][j] = true;
                    }
                }
            }
        }
    }

    // Empty label sets violate the example invariant; give each one label,
    // weighted by the marginals.
    let weight_total: f64 = spec.marginals.iter().sum();
    for row in labels.iter_mut() {
        if row.iter().any(|&b| b) {
            continue;
        }
        let mut pick = rng.gen_range(0.0..weight_total);
        for (class, &w) in spec.marginals.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 || class == c - 1 {
                row[class] = true;
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for row in &labels {
        let set: BTreeSet<usize> =
            row.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k).collect();
        let mut features = vec![0.0; d];
        for &class in &set {
            for (f, p) in features.iter_mut().zip(&spec.prototypes[class]) {
                *f += p;
            }
        }
        let inv = 1.0 / set.len() as f64;
        for f in features.iter_mut() {
            *f *= inv;
        }
        for f in features.iter_mut() {
            *f += spec.noise * standard_normal(&mut rng);
        }
        out.push(LabeledExample::new(features, set)?);
    }
    Ok(out)
}

/// Splits a dataset into a task stream.
///
/// Examples whose labels fall entirely inside one partition member
/// (specific-labelling) go to that task first. The remaining mixed-labelling
/// examples go, in dataset order, to the eligible task (one sharing at least
/// one label) with the fewest examples so far, ties broken by lowest task
/// index. Each task is then shuffled and split `train_fraction` / rest.
pub fn split_into_tasks(
    dataset: &[LabeledExample],
    partition: &[Vec<usize>],
    scenario: Scenario,
    train_fraction: f64,
    seed: u64,
) -> Result<TaskStream> {
    if partition.is_empty() {
        return Err(Error::Config("empty task partition".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config("train_fraction must lie in [0, 1]".into()));
    }
    let mut seen = BTreeSet::new();
    for part in partition {
        for &class in part {
            if !seen.insert(class) {
                return Err(Error::Config(format!(
                    "class {class} appears in more than one task"
                )));
            }
        }
    }
    let feature_dim = dataset
        .first()
        .map(|e| e.features.len())
        .ok_or_else(|| Error::Data("empty dataset".into()))?;
    if dataset.iter().any(|e| e.features.len() != feature_dim) {
        return Err(Error::Data("inconsistent feature lengths".into()));
    }
    for ex in dataset {
        for &label in &ex.labels {
            if !seen.contains(&label) {
                return Err(Error::Data(format!(
                    "label {label} not covered by any task"
                )));
            }
        }
    }

    let task_of = |label: usize| partition.iter().position(|p| p.contains(&label)).unwrap();

    let mut buckets: Vec<Vec<LabeledExample>> = vec![Vec::new(); partition.len()];
    let mut mixed = Vec::new();
    for ex in dataset {
        let owners: BTreeSet<usize> = ex.labels.iter().map(|&l| task_of(l)).collect();
        if owners.len() == 1 {
            buckets[*owners.iter().next().unwrap()].push(ex.clone());
        } else {
            mixed.push((ex.clone(), owners));
        }
    }
    for (ex, owners) in mixed {
        let pick = owners
            .iter()
            .copied()
            .min_by_key(|&t| (buckets[t].len(), t))
            .expect("mixed example has at least one owner");
        buckets[pick].push(ex);
    }

    let mut train = Vec::with_capacity(partition.len());
    let mut test = Vec::with_capacity(partition.len());
    for (t, mut bucket) in buckets.into_iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        bucket.shuffle(&mut rng);
        let n_train = (bucket.len() as f64 * train_fraction).floor() as usize;
        let rest = bucket.split_off(n_train);
        train.push(bucket);
        test.push(rest);
    }

    Ok(TaskStream {
        scenario,
        tasks: partition
            .iter()
            .enumerate()
            .map(|(index, classes)| TaskSpec {
                index,
                classes: classes.clone(),
            })
            .collect(),
        train,
        test,
        feature_dim,
    })
}

/// One example per line: comma-separated features, a pipe, then
/// semicolon-separated class indices.
pub fn save_dataset(path: &Path, dataset: &[LabeledExample]) -> Result<()> {
    let mut out = String::new();
    for ex in dataset {
        let feats: Vec<String> = ex.features.iter().map(|f| f.to_string()).collect();
        let labels: Vec<String> = ex.labels.iter().map(|l| l.to_string()).collect();
        out.push_str(&feats.join(","));
        out.push('|');
        out.push_str(&labels.join(";"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledExample>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (feat_part, label_part) = raw.split_once('|').ok_or(Error::Parse {
            line,
            msg: "missing '|' separator".into(),
        })?;
        let features: Vec<f64> = feat_part
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad feature value '{tok}'"),
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("feature vector of length {} (expected {w})", features.len()),
                })
            }
            _ => {}
        }
        if label_part.trim().is_empty() {
            return Err(Error::Data(format!("line {line}: empty label field")));
        }
        let labels: BTreeSet<usize> = label_part
            .split(';')
            .map(|tok| {
                tok.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad label index '{tok}'"),
                })
            })
            .collect::<Result<_>>()?;
        out.push(LabeledExample::new(features, labels).map_err(|e| Error::Data(format!(
            "line {line}: {e}"
        )))?);
    }
    Ok(out)
}

/// Writes `manifest.txt` plus per-task `task<N>.train.txt` / `task<N>.test.txt`
/// under `dir`.
pub fn save_stream(dir: &Path, stream: &TaskStream) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("mode = {}\n", stream.scenario));
    manifest.push_str(&format!("feature_dim = {}\n", stream.feature_dim));
    manifest.push_str(&format!("tasks = {}\n", stream.tasks.len()));
    for (t, task) in stream.tasks.iter().enumerate() {
        let classes: Vec<String> = task.classes.iter().map(|c| c.to_string()).collect();
        manifest.push_str(&format!("task.{t}.classes = {}\n", classes.join(";")));
        manifest.push_str(&format!("task.{t}.train = {}\n", stream.train[t].len()));
        manifest.push_str(&format!("task.{t}.test = {}\n", stream.test[t].len()));
        manifest.push_str(&format!("task.{t}.train_file = task{t}.train.txt\n"));
        manifest.push_str(&format!("task.{t}.test_file = task{t}.test.txt\n"));
        save_dataset(&dir.join(format!("task{t}.train.txt")), &stream.train[t])?;
        save_dataset(&dir.join(format!("task{t}.test.txt")), &stream.test[t])?;
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_stream(manifest_path: &Path) -> Result<TaskStream> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest_path)?;
    let mut kv = std::collections::BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected 'key = value'".into(),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| -> Result<&String> {
        kv.get(key)
            .ok_or_else(|| Error::Data(format!("manifest missing key '{key}'")))
    };
    let scenario: Scenario = get("mode")?.parse()?;
    let feature_dim: usize = get("feature_dim")?
        .parse()
        .map_err(|_| Error::Data("bad feature_dim".into()))?;
    let task_count: usize = get("tasks")?
        .parse()
        .map_err(|_| Error::Data("bad task count".into()))?;
    let mut tasks = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in 0..task_count {
        let classes: Vec<usize> = get(&format!("task.{t}.classes"))?
            .split(';')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Data(format!("bad class list for task {t}")))
            })
            .collect::<Result<_>>()?;
        tasks.push(TaskSpec { index: t, classes });
        let train_set = load_dataset(&dir.join(get(&format!("task.{t}.train_file"))?))?;
        let test_set = load_dataset(&dir.join(get(&format!("task.{t}.test_file"))?))?;
        let expect_train: usize = get(&format!("task.{t}.train"))?
            .parse()
            .map_err(|_| Error::Data("bad train count".into()))?;
        let expect_test: usize = get(&format!("task.{t}.test"))?
            .parse()
            .map_err(|_| Error::Data("bad test count".into()))?;
        if train_set.len() != expect_train || test_set.len() != expect_test {
            return Err(Error::Data(format!(
                "task {t}: manifest counts ({expect_train}/{expect_test}) do not match files ({}/{})",
                train_set.len(),
                test_set.len()
            )));
        }
        train.push(train_set);
        test.push(test_set);
    }
    if train
        .iter()
        .chain(test.iter())
        .flatten()
        .any(|e| e.features.len() != feature_dim)
    {
        return Err(Error::Data("feature_dim does not match dataset files".into()));
    }
    Ok(TaskStream {
        scenario,
        tasks,
        train,
        test,
        feature_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(marginals: Vec<f64>, pair: f64) -> CooccurrenceSpec {
        let c = marginals.len();
        let mut pairwise = vec![vec![pair; c]; c];
        for (i, row) in pairwise.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        CooccurrenceSpec {
            marginals,
            pairwise,
            prototypes: (0..c).map(|i| vec![i as f64, 1.0, -0.5]).collect(),
            noise: 0.1,
        }
    }

    #[test]
    fn all_one_marginals_force_every_label() {
        let spec = spec_with(vec![1.0; 4], 1.0);
        let data = generate_synthetic(&spec, 50, 3).unwrap();
        for ex in &data {
            assert_eq!(ex.labels.len(), 4);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = spec_with(vec![0.5, 0.4, 0.3], 0.15);
        let a = generate_synthetic(&spec, 200, 11).unwrap();
        let b = generate_synthetic(&spec, 200, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec, 200, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_spec_rejected() {
        let spec = spec_with(vec![0.0, 0.0], 0.0);
        assert!(matches!(
            generate_synthetic(&spec, 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empirical_conditionals_match_spec() {
        // Counting oracle: law-of-large-numbers check on P(i|j).
        let c = 6;
        let mut spec = spec_with(vec![0.4; c], 0.16);
        spec.pairwise[0][3] = 0.30;
        spec.pairwise[3][0] = 0.30;
        spec.pairwise[1][4] = 0.05;
        spec.pairwise[4][1] = 0.05;
        let n = 50_000;
        let data = generate_synthetic(&spec, n, 7).unwrap();
        let mut joint = vec![vec![0usize; c]; c];
        let mut count = vec![0usize; c];
        for ex in &data {
            for &i in &ex.labels {
                count[i] += 1;
                for &j in &ex.labels {
                    if i != j {
                        joint[i][j] += 1;
                    }
                }
            }
        }
        for i in 0..c {
            for j in 0..c {
                if i == j {
                    continue;
                }
                let expected = spec.pairwise[i][j] / spec.marginals[j];
                let observed = joint[i][j] as f64 / count[j] as f64;
                assert!(
                    (expected - observed).abs() < 0.02,
                    "P({i}|{j}): expected {expected:.4}, observed {observed:.4}"
                );
            }
        }
    }

    fn tiny_dataset() -> Vec<LabeledExample> {
        let mk = |labels: &[usize]| {
            LabeledExample::new(vec![0.0, 0.0], labels.iter().copied().collect()).unwrap()
        };
        vec![mk(&[0, 1]), mk(&[2]), mk(&[3]), mk(&[1, 2])]
    }

    #[test]
    fn specific_labelling_goes_to_its_task() {
        let stream = split_into_tasks(
            &tiny_dataset(),
            &[vec![0, 1], vec![2, 3]],
            Scenario::Cl,
            1.0,
            0,
        )
        .unwrap();
        // {0,1} is specific to task 0; {2} and {3} to task 1; {1,2} is mixed
        // and goes to task 0 (1 example) over task 1 (2 examples).
        assert_eq!(stream.train[0].len(), 2);
        assert_eq!(stream.train[1].len(), 2);
        assert!(stream.train[0].iter().any(|e| e.labels.contains(&2)));
    }

    #[test]
    fn uncovered_label_is_a_data_error() {
        let data = tiny_dataset();
        let err = split_into_tasks(&data, &[vec![0, 1], vec![2]], Scenario::Cl, 0.7, 0);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn all_specific_split_ignores_balancing() {
        let mk = |labels: &[usize]| {
            LabeledExample::new(vec![1.0], labels.iter().copied().collect()).unwrap()
        };
        let data = vec![mk(&[0]), mk(&[0]), mk(&[0]), mk(&[1])];
        let stream =
            split_into_tasks(&data, &[vec![0], vec![1]], Scenario::Cl, 1.0, 9).unwrap();
        assert_eq!(stream.train[0].len(), 3);
        assert_eq!(stream.train[1].len(), 1);
    }

    #[test]
    fn split_preserves_example_multiset() {
        let spec = spec_with(vec![0.5, 0.4, 0.3, 0.35], 0.12);
        let data = generate_synthetic(&spec, 300, 5).unwrap();
        let stream =
            split_into_tasks(&data, &[vec![0, 1], vec![2, 3]], Scenario::Il, 0.7, 5).unwrap();
        let mut collected: Vec<&LabeledExample> = stream
            .train
            .iter()
            .chain(stream.test.iter())
            .flatten()
            .collect();
        assert_eq!(collected.len(), data.len());
        let key = |e: &LabeledExample| {
            (
                e.labels.iter().copied().collect::<Vec<_>>(),
                e.features.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            )
        };
        collected.sort_by_key(|e| key(e));
        let mut original: Vec<&LabeledExample> = data.iter().collect();
        original.sort_by_key(|e| key(e));
        assert_eq!(collected, original);
    }

    #[test]
    fn projection_first_task_modes_agree() {
        let data = tiny_dataset();
        let il =
            split_into_tasks(&data, &[vec![0, 1], vec![2, 3]], Scenario::Il, 1.0, 0).unwrap();
        let cl =
            split_into_tasks(&data, &[vec![0, 1], vec![2, 3]], Scenario::Cl, 1.0, 0).unwrap();
        for (a, b) in il.train[0].iter().zip(cl.train[0].iter()) {
            assert_eq!(il.project_train(a, 0), cl.project_train(b, 0));
        }
    }

    #[test]
    fn projection_strips_old_labels_in_il_only() {
        // Classes: task0 = {sky=0}, task1 = {7}, task2 = {dog=3}.
        let ex = LabeledExample::new(vec![0.0], [0usize, 3].into_iter().collect()).unwrap();
        let tasks = vec![
            TaskSpec { index: 0, classes: vec![0] },
            TaskSpec { index: 1, classes: vec![7] },
            TaskSpec { index: 2, classes: vec![3] },
        ];
        let mut stream = TaskStream {
            scenario: Scenario::Il,
            tasks,
            train: vec![vec![], vec![], vec![ex.clone()]],
            test: vec![vec![], vec![], vec![]],
            feature_dim: 1,
        };
        assert_eq!(stream.project_train(&ex, 2), vec![1.0]);
        stream.scenario = Scenario::Cl;
        assert_eq!(stream.project_train(&ex, 2), vec![1.0, 0.0, 1.0]);
        // IL projection embeds into the CL one with old positions zeroed.
        assert_eq!(stream.project_test(&ex, 2), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        let spec = spec_with(vec![0.6, 0.5], 0.3);
        let data = generate_synthetic(&spec, 40, 2).unwrap();
        save_dataset(&path, &data).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "1.0,2.0|0\n1.0|1\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, "1.0,2.0|\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Data(_))));
    }

    #[test]
    fn stream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_with(vec![0.5, 0.4, 0.6, 0.3], 0.1);
        let data = generate_synthetic(&spec, 120, 8).unwrap();
        let stream =
            split_into_tasks(&data, &[vec![0, 1], vec![2, 3]], Scenario::Il, 0.7, 8).unwrap();
        save_stream(dir.path(), &stream).unwrap();
        let back = load_stream(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(stream, back);
    }
}
