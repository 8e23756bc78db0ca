//! Augmented correlation matrices.
//!
//! The ACM holds conditional co-occurrence probabilities P(i|j) over all seen
//! classes and grows by one block row/column of tasks at a time:
//!
//! ```text
//! A_t = | A_{t-1}  R_t |      old-old  old-new
//!       | Q_t      B_t |      new-old  new-new
//! ```
//!
//! `B_t` always comes from hard new-class counts. The inter-task blocks come
//! from hard counts in the CL scenario and from expert soft-label
//! accumulators in IL, where old-class annotations are missing.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stream::{Scenario, TaskStream};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Streaming accumulators for one task's training pass.
///
/// Layout: `old` old classes (seen before this task) followed by `new`
/// classes, in seen order. `pair_counts` rows cover old-then-new, columns
/// cover new classes only. Counts are kept in `f64` (exact for any feasible
/// stream size) so assembly never changes representation.
#[derive(Clone, Debug, PartialEq)]
pub struct CoocCounters {
    scenario: Scenario,
    old: usize,
    new: usize,
    /// N_ij for i over old+new, j over new. Hard co-occurrence counts.
    pair_counts: Matrix,
    /// N_j per new class.
    new_counts: Vec<f64>,
    /// N_i per old class; meaningful in CL only.
    old_counts: Vec<f64>,
    /// S_i = running sum of expert soft labels per old class (IL).
    soft_sums: Vec<f64>,
    /// M_ij = running sum of soft_i * hard_j over old x new (IL).
    soft_pairs: Matrix,
}

impl CoocCounters {
    pub fn new(scenario: Scenario, old: usize, new: usize) -> Self {
        CoocCounters {
            scenario,
            old,
            new,
            pair_counts: Matrix::zeros(old + new, new),
            new_counts: vec![0.0; new],
            old_counts: vec![0.0; old],
            soft_sums: vec![0.0; old],
            soft_pairs: Matrix::zeros(old, new),
        }
    }

    pub fn old_classes(&self) -> usize {
        self.old
    }

    pub fn new_classes(&self) -> usize {
        self.new
    }

    /// Accumulates hard-label statistics for one projected training vector.
    ///
    /// CL expects the vector over all seen classes (old then new); IL over
    /// the task's new classes only.
    pub fn update_hard(&mut self, label_vec: &[f64]) -> Result<()> {
        let expected = match self.scenario {
            Scenario::Cl => self.old + self.new,
            Scenario::Il => self.new,
        };
        if label_vec.len() != expected {
            return Err(Error::Dimension(format!(
                "hard label vector of length {} (expected {expected} for {})",
                label_vec.len(),
                self.scenario
            )));
        }
        let offset = expected - self.new;
        for j in 0..self.new {
            if label_vec[offset + j] == 0.0 {
                continue;
            }
            self.new_counts[j] += 1.0;
            for (i, &li) in label_vec.iter().enumerate() {
                // Row index in pair_counts: CL vectors already use the
                // old-then-new layout; IL vectors cover new classes only.
                let row = if self.scenario == Scenario::Cl { i } else { self.old + i };
                if li != 0.0 && row != self.old + j {
                    self.pair_counts.set(row, j, self.pair_counts.get(row, j) + 1.0);
                }
            }
        }
        if self.scenario == Scenario::Cl {
            for i in 0..self.old {
                if label_vec[i] != 0.0 {
                    self.old_counts[i] += 1.0;
                }
            }
        }
        Ok(())
    }

    pub fn update_hard_batch(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        for v in batch {
            self.update_hard(v)?;
        }
        Ok(())
    }

    /// Accumulates expert soft labels against the example's hard new-class
    /// labels. Soft values must be post-sigmoid, i.e. in `[0, 1]`.
    pub fn update_soft(&mut self, soft_old: &[f64], hard_new: &[f64]) -> Result<()> {
        if soft_old.len() != self.old || hard_new.len() != self.new {
            return Err(Error::Dimension(format!(
                "soft/hard lengths {}/{} (expected {}/{})",
                soft_old.len(),
                hard_new.len(),
                self.old,
                self.new
            )));
        }
        if soft_old.iter().any(|&z| !(0.0..=1.0).contains(&z)) {
            return Err(Error::Contract(
                "soft labels must be post-sigmoid values in [0, 1]".into(),
            ));
        }
        for (i, &z) in soft_old.iter().enumerate() {
            self.soft_sums[i] += z;
            for (j, &y) in hard_new.iter().enumerate() {
                if y != 0.0 {
                    self.soft_pairs.set(i, j, self.soft_pairs.get(i, j) + z);
                }
            }
        }
        Ok(())
    }

    /// Merges another counter set by addition (used for parallel counting).
    pub fn merge(&mut self, other: &CoocCounters) -> Result<()> {
        if self.scenario != other.scenario || self.old != other.old || self.new != other.new {
            return Err(Error::Contract("cannot merge incompatible counters".into()));
        }
        self.pair_counts.add_assign(&other.pair_counts)?;
        self.soft_pairs.add_assign(&other.soft_pairs)?;
        for (a, b) in self.new_counts.iter_mut().zip(&other.new_counts) {
            *a += b;
        }
        for (a, b) in self.old_counts.iter_mut().zip(&other.old_counts) {
            *a += b;
        }
        for (a, b) in self.soft_sums.iter_mut().zip(&other.soft_sums) {
            *a += b;
        }
        Ok(())
    }

    /// Assembles the three fresh blocks. Every entry is a conditional
    /// probability clamped to `[0, 1]`; a zero denominator yields 0 (class
    /// never observed). `B` has unit diagonal by convention.
    ///
    /// Returns `(B, R, Q)` with shapes `new x new`, `old x new`, `new x old`.
    /// `Q[j][i] = P(new_j | old_i)`.
    pub fn assemble_blocks(&self) -> (Matrix, Matrix, Matrix) {
        let ratio = |num: f64, den: f64| if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };

        let mut b = Matrix::zeros(self.new, self.new);
        for i in 0..self.new {
            for j in 0..self.new {
                if i == j {
                    b.set(i, j, 1.0);
                } else {
                    b.set(i, j, ratio(self.pair_counts.get(self.old + i, j), self.new_counts[j]));
                }
            }
        }

        let mut r = Matrix::zeros(self.old, self.new);
        for i in 0..self.old {
            for j in 0..self.new {
                let num = match self.scenario {
                    Scenario::Cl => self.pair_counts.get(i, j),
                    Scenario::Il => self.soft_pairs.get(i, j),
                };
                r.set(i, j, ratio(num, self.new_counts[j]));
            }
        }

        let mut q = Matrix::zeros(self.new, self.old);
        for j in 0..self.new {
            for i in 0..self.old {
                let value = match self.scenario {
                    Scenario::Cl => ratio(self.pair_counts.get(i, j), self.old_counts[i]),
                    // Bayes' rule: P(j|i) = R_ij * N_j / S_i.
                    Scenario::Il => ratio(r.get(i, j) * self.new_counts[j], self.soft_sums[i]),
                };
                q.set(j, i, value);
            }
        }
        (b, r, q)
    }
}

/// The augmented correlation matrix for one task, with its block boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcMatrix {
    pub values: Matrix,
    /// Number of old classes: the leading `boundary x boundary` block is the
    /// previous task's matrix, bit for bit.
    pub boundary: usize,
    /// 1-based task index.
    pub task: usize,
}

impl AcMatrix {
    pub fn class_count(&self) -> usize {
        self.values.rows()
    }
}

/// Block-composes the next ACM. With no predecessor this is the first task
/// and the matrix is exactly `B`.
pub fn augment(prev: Option<&AcMatrix>, b: &Matrix, r: &Matrix, q: &Matrix) -> Result<AcMatrix> {
    let k = b.rows();
    if b.cols() != k {
        return Err(Error::Dimension(format!(
            "block B must be square, got {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    let Some(prev) = prev else {
        if r.rows() != 0 || q.cols() != 0 {
            return Err(Error::Dimension(
                "first task admits no inter-task blocks".into(),
            ));
        }
        return Ok(AcMatrix { values: b.clone(), boundary: 0, task: 1 });
    };
    let m = prev.values.rows();
    if r.shape() != (m, k) {
        return Err(Error::Dimension(format!(
            "block R is {}x{}, expected {m}x{k}",
            r.rows(),
            r.cols()
        )));
    }
    if q.shape() != (k, m) {
        return Err(Error::Dimension(format!(
            "block Q is {}x{}, expected {k}x{m}",
            q.rows(),
            q.cols()
        )));
    }
    let n = m + k;
    let mut values = Matrix::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            values.set(i, j, prev.values.get(i, j));
        }
        for j in 0..k {
            values.set(i, m + j, r.get(i, j));
        }
    }
    for i in 0..k {
        for j in 0..m {
            values.set(m + i, j, q.get(i, j));
        }
        for j in 0..k {
            values.set(m + i, m + j, b.get(i, j));
        }
    }
    Ok(AcMatrix { values, boundary: m, task: prev.task + 1 })
}

/// Propagation normalization for the graph layers: `A_hat = D^-1 (A + I)`
/// where `D` holds the row sums of `A + I`. Self-loops keep every row sum
/// positive, so rows of the result sum to exactly 1.
pub fn normalize_for_gcn(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 1.0;
        for j in 0..n {
            row_sum += a.get(i, j);
        }
        for j in 0..n {
            let v = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, v / row_sum);
        }
    }
    out
}

/// Optional pre-binarization (entries >= threshold become 1) before the same
/// self-loop row normalization. Off by default: ACM entries are calibrated
/// probabilities and thresholding would discard the soft statistics.
pub fn normalize_for_gcn_binarized(a: &Matrix, threshold: f64) -> Matrix {
    let bin = a.map(|v| if v >= threshold { 1.0 } else { 0.0 });
    normalize_for_gcn(&bin)
}

/// Offline oracle ACM for task `t` (0-based), built from complete hard
/// labels by brute-force counting, with the same per-task windows as the
/// streaming construction: each fresh block uses only task `t`'s training
/// examples, the old-old block is inherited. Independent of
/// [`CoocCounters`] by design.
pub fn oracle_acm(stream: &TaskStream, t: usize) -> Result<AcMatrix> {
    let mut prev: Option<AcMatrix> = None;
    for task in 0..=t {
        let seen = stream.seen_classes(task);
        let m = seen.len() - stream.tasks[task].classes.len();
        let k = stream.tasks[task].classes.len();
        let has = |ex: &crate::stream::LabeledExample, pos: usize| ex.labels.contains(&seen[pos]);

        let count_with = |pos: usize| -> f64 {
            stream.train[task].iter().filter(|ex| has(ex, pos)).count() as f64
        };
        let count_both = |a: usize, b: usize| -> f64 {
            stream.train[task]
                .iter()
                .filter(|ex| has(ex, a) && has(ex, b))
                .count() as f64
        };
        let conditional = |i: usize, j: usize| -> f64 {
            let denom = count_with(j);
            if denom > 0.0 {
                (count_both(i, j) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            }
        };

        let mut b = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                b.set(i, j, if i == j { 1.0 } else { conditional(m + i, m + j) });
            }
        }
        let mut r = Matrix::zeros(m, k);
        for i in 0..m {
            for j in 0..k {
                r.set(i, j, conditional(i, m + j));
            }
        }
        let mut q = Matrix::zeros(k, m);
        for j in 0..k {
            for i in 0..m {
                q.set(j, i, conditional(m + j, i));
            }
        }
        prev = Some(augment(prev.as_ref(), &b, &r, &q)?);
    }
    prev.ok_or_else(|| Error::Eval("oracle over an empty stream".into()))
}

/// Frobenius distance with the diagonal excluded (self-relationships are a
/// convention, not a statistic).
pub fn acm_distance(a: &Matrix, oracle: &Matrix) -> Result<f64> {
    a.frobenius_distance(oracle, true)
}

/// Writes `t=<t> m=<m> mode=<IL|CL>` then one CSV row per matrix row with 17
/// significant digits.
pub fn write_acm(path: &Path, acm: &AcMatrix, scenario: Scenario) -> Result<()> {
    let mut out = format!("t={} m={} mode={}\n", acm.task, acm.boundary, scenario);
    for i in 0..acm.values.rows() {
        let row: Vec<String> = acm.values.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_acm(path: &Path) -> Result<(AcMatrix, Scenario)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty ACM file".into(),
    })?;
    let mut task = None;
    let mut boundary = None;
    let mut scenario = None;
    for tok in header.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or(Error::Parse {
            line: 1,
            msg: format!("bad header token '{tok}'"),
        })?;
        match k {
            "t" => task = v.parse::<usize>().ok(),
            "m" => boundary = v.parse::<usize>().ok(),
            "mode" => scenario = v.parse::<Scenario>().ok(),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unknown header key '{k}'"),
                })
            }
        }
    }
    let (task, boundary, scenario) = match (task, boundary, scenario) {
        (Some(t), Some(m), Some(s)) => (t, m, s),
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "header must carry t=, m= and mode=".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = raw
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad matrix entry '{tok}'"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let values = Matrix::from_rows(&rows)?;
    if values.rows() != values.cols() {
        return Err(Error::Data(format!(
            "ACM must be square, got {}x{}",
            values.rows(),
            values.cols()
        )));
    }
    Ok((AcMatrix { values, boundary, task }, scenario))
}
