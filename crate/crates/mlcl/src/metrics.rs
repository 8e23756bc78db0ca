//! Multi-label evaluation and the forgetting measure.
//!
//! Seven metrics: mean average precision over classes, per-class
//! precision/recall/F1 (CP, CR, CF1) and overall precision/recall/F1
//! (OP, OR, OF1), all reported as percentages. Forgetting compares each
//! task's final metric value against its best historical value.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Scores and binary ground truth for one evaluation sweep, both `n x C`.
#[derive(Clone, Debug)]
pub struct EvalBatch {
    pub scores: Matrix,
    pub truth: Matrix,
}

impl EvalBatch {
    pub fn new(scores: Matrix, truth: Matrix) -> Result<Self> {
        if scores.shape() != truth.shape() {
            return Err(Error::Dimension(format!(
                "scores {}x{} vs truth {}x{}",
                scores.rows(),
                scores.cols(),
                truth.rows(),
                truth.cols()
            )));
        }
        if scores.rows() == 0 {
            return Err(Error::Eval("empty evaluation batch".into()));
        }
        Ok(EvalBatch { scores, truth })
    }

    pub fn examples(&self) -> usize {
        self.scores.rows()
    }

    pub fn classes(&self) -> usize {
        self.scores.cols()
    }
}

/// Average precision of one class column: mean over the positives, ranked by
/// descending score (stable, ties broken by original index), of the
/// precision At each positive. `None` when the column has no positives.
pub fn average_precision(scores: &[f64], truth: &[f64]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t != 0.0).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if truth[idx] != 0.0 {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / positives as f64)
}

fn column(m: &Matrix, c: usize) -> Vec<f64> {
    (0..m.rows()).map(|r| m.get(r, c)).collect()
}

/// Mean of per-class average precision, skipping classes without positives
/// (their recall is undefined). Errors if no class has a positive.
pub fn mean_average_precision(batch: &EvalBatch) -> Result<f64> {
    let mut acc = 0.0;
    let mut counted = 0usize;
    for c in 0..batch.classes() {
        match average_precision(&column(&batch.scores, c), &column(&batch.truth, c)) {
            Some(ap) => {
                acc += ap;
                counted += 1;
            }
            None => log::debug!("class {c} has no positives; skipped in mAP"),
        }
    }
    if counted == 0 {
        return Err(Error::Eval("no class has a positive example".into()));
    }
    Ok(acc / counted as f64)
}

/// Precision/recall/F1 aggregates, as fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrfScores {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or_: f64,
    pub of1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Thresholded precision/recall metrics. Per-class averages skip classes
/// without ground-truth positives; ratios with empty denominators count as 0.
pub fn prf_metrics(batch: &EvalBatch, threshold: f64) -> Result<PrfScores> {
    if !(0.0..1.0).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::Config(format!(
            "decision threshold {threshold} outside (0, 1)"
        )));
    }
    let c = batch.classes();
    let mut correct = vec![0.0f64; c]; // N_i^c
    let mut predicted = vec![0.0f64; c]; // N_i^p
    let mut truth = vec![0.0f64; c]; // N_i^g
    for r in 0..batch.examples() {
        for i in 0..c {
            let pred = batch.scores.get(r, i) >= threshold;
            let is_true = batch.truth.get(r, i) != 0.0;
            if pred {
                predicted[i] += 1.0;
                if is_true {
                    correct[i] += 1.0;
                }
            }
            if is_true {
                truth[i] += 1.0;
            }
        }
    }
    let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
    let mut cp = 0.0;
    let mut cr = 0.0;
    let mut counted = 0usize;
    for i in 0..c {
        if truth[i] == 0.0 {
            log::debug!("class {i} has no positives; skipped in CP/CR");
            continue;
        }
        cp += ratio(correct[i], predicted[i]);
        cr += correct[i] / truth[i];
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Eval("no class has a positive example".into()));
    }
    cp /= counted as f64;
    cr /= counted as f64;
    let op = ratio(correct.iter().sum(), predicted.iter().sum());
    let or_ = ratio(correct.iter().sum(), truth.iter().sum());
    Ok(PrfScores {
        cp,
        cr,
        cf1: harmonic(cp, cr),
        op,
        or_,
        of1: harmonic(op, or_),
    })
}

/// All seven metrics as percentages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub map: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or_: f64,
    pub of1: f64,
}

pub const METRIC_NAMES: [&str; 7] = ["mAP", "CP", "CR", "CF1", "OP", "OR", "OF1"];

impl MetricReport {
    pub fn values(&self) -> [f64; 7] {
        [self.map, self.cp, self.cr, self.cf1, self.op, self.or_, self.of1]
    }

    pub fn by_name(&self, name: &str) -> Option<f64> {
        METRIC_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.values()[i])
    }
}

pub fn evaluate(batch: &EvalBatch, threshold: f64) -> Result<MetricReport> {
    let map = mean_average_precision(batch)?;
    let prf = prf_metrics(batch, threshold)?;
    Ok(MetricReport {
        map: 100.0 * map,
        cp: 100.0 * prf.cp,
        cr: 100.0 * prf.cr,
        cf1: 100.0 * prf.cf1,
        op: 100.0 * prf.op,
        or_: 100.0 * prf.or_,
        of1: 100.0 * prf.of1,
    })
}

/// `a[l][j]`: metric values measured after training task `l`, evaluated on
/// task `j`'s test set, for `j <= l`. Row `l` is pushed after task `l`
/// finishes (all indices 0-based; reports use 1-based labels).
#[derive(Clone, Debug, Default)]
pub struct HistoryMatrix {
    rows: Vec<Vec<MetricReport>>,
}

impl HistoryMatrix {
    pub fn new() -> Self {
        HistoryMatrix::default()
    }

    pub fn push_row(&mut self, row: Vec<MetricReport>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Contract(format!(
                "history row {} must hold {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, l: usize, j: usize) -> &MetricReport {
        &self.rows[l][j]
    }
}

/// Per-task forgetting and its average after the final task:
/// `f_j = max_{l < T} a[l][j] - a[T][j]`, averaged over `j < T`.
/// Negative values mean backward transfer and are reported as-is.
pub fn forgetting(
    history: &HistoryMatrix,
    metric: impl Fn(&MetricReport) -> f64,
) -> Result<(f64, Vec<f64>)> {
    let t = history.tasks();
    if t < 2 {
        return Err(Error::Eval(
            "forgetting is undefined before the second task".into(),
        ));
    }
    let mut per_task = Vec::with_capacity(t - 1);
    for j in 0..t - 1 {
        let best = (j..t - 1)
            .map(|l| metric(history.get(l, j)))
            .fold(f64::NEG_INFINITY, f64::max);
        per_task.push(best - metric(history.get(t - 1, j)));
    }
    let avg = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok((avg, per_task))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(scores: &[Vec<f64>], truth: &[Vec<f64>]) -> EvalBatch {
        EvalBatch::new(
            Matrix::from_rows(scores).unwrap(),
            Matrix::from_rows(truth).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_ranking_gives_ap_one() {
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_hand_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[1.0, 0.0, 1.0]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let ap = average_precision(&[0.4, 0.3, 0.2, 0.1], &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(ap, 0.25);
    }

    #[test]
    fn ap_is_rank_invariant() {
        let scores = [0.9, 0.5, 0.4, 0.05];
        let truth = [1.0, 0.0, 1.0, 0.0];
        let base = average_precision(&scores, &truth).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-5.0 * s).exp())).collect();
        assert_eq!(average_precision(&squashed, &truth).unwrap(), base);
    }

    #[test]
    fn no_positives_class_is_skipped() {
        assert!(average_precision(&[0.5, 0.4], &[0.0, 0.0]).is_none());
        let b = batch(
            &[vec![0.9, 0.1], vec![0.2, 0.8]],
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
        );
        // Class 1 has no positives; mAP is class 0's AP alone.
        assert_eq!(mean_average_precision(&b).unwrap(), 1.0);
    }

    #[test]
    fn prf_hand_example() {
        // truth [[1,0],[1,1]], preds [[1,1],[0,1]]:
        // N^c = [1,1], N^p = [1,2], N^g = [2,1].
        let b = batch(
            &[vec![0.9, 0.8], vec![0.2, 0.7]],
            &[vec![1.0, 0.0], vec![1.0, 1.0]],
        );
        let prf = prf_metrics(&b, 0.5).unwrap();
        assert!((prf.op - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.or_ - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.of1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.cp - 0.75).abs() < 1e-12);
        assert!((prf.cr - 0.75).abs() < 1e-12);
        assert!((prf.cf1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_hit_one_hundred() {
        let truth = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let b = batch(
            &[vec![0.9, 0.1, 0.8], vec![0.3, 0.7, 0.9]],
            &truth,
        );
        let report = evaluate(&b, 0.5).unwrap();
        for v in report.values() {
            assert!((v - 100.0).abs() < 1e-9, "{report:?}");
        }
    }

    #[test]
    fn no_predicted_positives_yields_zero_op() {
        let b = batch(
            &[vec![0.1, 0.2], vec![0.3, 0.05]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let prf = prf_metrics(&b, 0.5).unwrap();
        assert_eq!(prf.op, 0.0);
        assert_eq!(prf.of1, 0.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(EvalBatch::new(Matrix::zeros(0, 3), Matrix::zeros(0, 3)).is_err());
    }

    fn history_from(values: &[Vec<f64>]) -> HistoryMatrix {
        let mut h = HistoryMatrix::new();
        for row in values {
            let reports: Vec<MetricReport> = row
                .iter()
                .map(|&v| MetricReport {
                    map: v,
                    cp: v,
                    cr: v,
                    cf1: v,
                    op: v,
                    or_: v,
                    of1: v,
                })
                .collect();
            h.push_row(reports).unwrap();
        }
        h
    }

    #[test]
    fn constant_history_has_zero_forgetting() {
        let h = history_from(&[vec![70.0], vec![70.0, 60.0], vec![70.0, 60.0, 50.0]]);
        let (f, per) = forgetting(&h, |r| r.map).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(per, vec![0.0, 0.0]);
    }

    #[test]
    fn forgetting_hand_example() {
        let h = history_from(&[vec![0.8], vec![0.6, 0.7]]);
        let (f, per) = forgetting(&h, |r| r.map).unwrap();
        assert!((f - 0.2).abs() < 1e-12);
        assert_eq!(per.len(), 1);
        assert!((per[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn improvement_reports_negative_forgetting() {
        let h = history_from(&[vec![0.5], vec![0.6, 0.4], vec![0.7, 0.5, 0.3]]);
        let (f, per) = forgetting(&h, |r| r.map).unwrap();
        assert!(per[0] < 0.0);
        assert!(f < 0.0);
    }

    #[test]
    fn forgetting_needs_two_tasks() {
        let h = history_from(&[vec![0.5]]);
        assert!(forgetting(&h, |r| r.map).is_err());
    }

    #[test]
    fn brute_force_prf_agreement() {
        // Independent confusion-count implementation on pseudo-random batches.
        let mut seed = 2024u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (1u64 << 31) as f64
        };
        for _ in 0..50 {
            let n = 3 + (next() * 60.0) as usize;
            let c = 2 + (next() * 8.0) as usize;
            let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| next()).collect()).collect();
            let mut truth: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..c).map(|_| if next() > 0.6 { 1.0 } else { 0.0 }).collect())
                .collect();
            truth[0] = vec![1.0; c]; // every class has a positive
            let b = batch(&scores, &truth);
            let fast = prf_metrics(&b, 0.5).unwrap();

            let mut tp = vec![0usize; c];
            let mut fp = vec![0usize; c];
            let mut fn_ = vec![0usize; c];
            for r in 0..n {
                for i in 0..c {
                    let p = scores[r][i] >= 0.5;
                    let t = truth[r][i] == 1.0;
                    match (p, t) {
                        (true, true) => tp[i] += 1,
                        (true, false) => fp[i] += 1,
                        (false, true) => fn_[i] += 1,
                        _ => {}
                    }
                }
            }
            let cp: f64 = (0..c)
                .map(|i| {
                    if tp[i] + fp[i] > 0 {
                        tp[i] as f64 / (tp[i] + fp[i]) as f64
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / c as f64;
            let cr: f64 =
                (0..c).map(|i| tp[i] as f64 / (tp[i] + fn_[i]) as f64).sum::<f64>() / c as f64;
            let op = tp.iter().sum::<usize>() as f64
                / (tp.iter().sum::<usize>() + fp.iter().sum::<usize>()).max(1) as f64;
            let orr = tp.iter().sum::<usize>() as f64
                / (tp.iter().sum::<usize>() + fn_.iter().sum::<usize>()) as f64;
            assert!((fast.cp - cp).abs() < 1e-12);
            assert!((fast.cr - cr).abs() < 1e-12);
            assert!((fast.op - op).abs() < 1e-12);
            assert!((fast.or_ - orr).abs() < 1e-12);
        }
    }
}
