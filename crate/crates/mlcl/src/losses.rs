//! The three objective terms and their weighted combination.
//!
//! Each loss exists twice: a plain `f64` form used by tests and reports, and
//! a tape form used for training. The plain form is the independent oracle
//! for the differentiable one; a parity test keeps them glued together.
//!
//! Per-example losses sum over classes; the trainer averages over the batch
//! so the loss weights stay scale-stable across batch sizes.

use crate::autodiff::{NodeId, Tape, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Weights for the classification, distillation and relationship terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        if lambda1 <= 0.0 {
            return Err(Error::Config("lambda1 must be positive".into()));
        }
        if lambda2 < 0.0 || lambda3 < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(LossWeights { lambda1, lambda2, lambda3 })
    }
}

fn bce_sum_plain(targets: &[f64], probs: &[f64], what: &str) -> Result<f64> {
    if targets.len() != probs.len() {
        return Err(Error::Dimension(format!(
            "{what}: {} targets vs {} predictions",
            targets.len(),
            probs.len()
        )));
    }
    let mut acc = 0.0;
    for (&t, &p) in targets.iter().zip(probs) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
    }
    Ok(acc)
}

/// Summed binary cross-entropy of predictions against hard labels. The label
/// space is the scenario's training space: all seen classes in CL, the
/// task's new classes in IL (the caller slices accordingly).
pub fn cls_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    bce_sum_plain(y, y_hat, "cls_loss")
}

/// Distillation: binary cross-entropy against the expert's soft labels over
/// old classes. Undefined at the first task; the trainer skips it there.
pub fn dst_loss(soft: &[f64], y_hat_old: &[f64]) -> Result<f64> {
    bce_sum_plain(soft, y_hat_old, "dst_loss")
}

/// Relationship preservation: squared error between the expert's graph
/// scores and the current ones, over old classes only. New-class entries of
/// `y_gph` never contribute.
pub fn gph_loss(target: &[f64], y_gph: &[f64]) -> Result<f64> {
    if target.len() > y_gph.len() {
        return Err(Error::Dimension(format!(
            "gph_loss: {} targets vs {} graph scores",
            target.len(),
            y_gph.len()
        )));
    }
    Ok(target
        .iter()
        .zip(y_gph)
        .map(|(&t, &g)| (g - t) * (g - t))
        .sum())
}

/// `lambda1 * cls + lambda2 * dst + lambda3 * gph`. Absent terms (first
/// task) contribute nothing.
pub fn total_loss(w: &LossWeights, cls: f64, dst: Option<f64>, gph: Option<f64>) -> f64 {
    w.lambda1 * cls + w.lambda2 * dst.unwrap_or(0.0) + w.lambda3 * gph.unwrap_or(0.0)
}

/// Tape form of [`cls_loss`]; `probs` is a column of probabilities.
pub fn cls_loss_node(tape: &mut Tape, y: &[f64], probs: NodeId) -> Result<NodeId> {
    tape.bce_sum(probs, Matrix::column(y))
}

/// Tape form of [`dst_loss`] over the leading `old` rows of `probs`.
pub fn dst_loss_node(tape: &mut Tape, soft: &[f64], probs: NodeId) -> Result<NodeId> {
    let old = tape.slice_rows(probs, 0, soft.len())?;
    tape.bce_sum(old, Matrix::column(soft))
}

/// Tape form of [`gph_loss`] over the leading `target.len()` rows of `y_gph`.
pub fn gph_loss_node(tape: &mut Tape, target: &[f64], y_gph: NodeId) -> Result<NodeId> {
    let old = tape.slice_rows(y_gph, 0, target.len())?;
    tape.squared_error_sum(old, Matrix::column(target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{grad_check, GradCheckOptions};

    #[test]
    fn perfect_prediction_is_near_zero() {
        let y = vec![1.0, 0.0, 1.0];
        let y_hat = vec![1.0 - 1e-12, 1e-12, 1.0 - 1e-12];
        assert!(cls_loss(&y, &y_hat).unwrap() < 1e-9);
    }

    #[test]
    fn cls_hand_value() {
        let loss = cls_loss(&[1.0], &[0.5]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cls_length_mismatch() {
        assert!(cls_loss(&[1.0, 0.0], &[0.5]).is_err());
    }

    #[test]
    fn dst_minimum_is_the_soft_entropy() {
        // At y_hat = z the soft-target BCE equals the binary entropy of z.
        let z = vec![0.3, 0.9];
        let at_min = dst_loss(&z, &z).unwrap();
        let entropy: f64 = z
            .iter()
            .map(|&p| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()))
            .sum();
        assert!((at_min - entropy).abs() < 1e-12);
        // Any perturbation increases the loss.
        for (i, delta) in [(0usize, 0.05), (1, -0.05)] {
            let mut moved = z.clone();
            moved[i] += delta;
            assert!(dst_loss(&z, &moved).unwrap() > at_min);
        }
    }

    #[test]
    fn dst_hand_values() {
        assert!(dst_loss(&[1.0], &[1.0 - 1e-12]).unwrap() < 1e-9);
        let fair = dst_loss(&[0.5], &[0.5]).unwrap();
        assert!((fair - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gph_hand_values_and_new_class_immunity() {
        assert_eq!(gph_loss(&[1.0, 2.0], &[1.0, 2.0, 99.0]).unwrap(), 0.0);
        assert_eq!(gph_loss(&[1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap(), 5.0);
        let a = gph_loss(&[1.0, 2.0], &[0.5, 1.5, -3.0]).unwrap();
        let b = gph_loss(&[1.0, 2.0], &[0.5, 1.5, 42.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::new(0.7, 0.3, 1e3).unwrap();
        let total = total_loss(&w, 2.0, Some(1.0), Some(0.01));
        assert!((total - (0.7 * 2.0 + 0.3 + 10.0)).abs() < 1e-12);
        // Degenerate weights reduce to a pure classification objective.
        let ft = LossWeights::new(0.5, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(&ft, 2.0, Some(1.0), Some(1.0)), 1.0);
        assert!(LossWeights::new(0.0, 0.5, 0.5).is_err());
        assert!(LossWeights::new(0.5, -0.1, 0.0).is_err());
    }

    #[test]
    fn tape_losses_match_plain_losses() {
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let probs = vec![0.8, 0.3, 0.6, 0.1];
        let soft = vec![0.7, 0.2];
        let gph_target = vec![0.5, -1.0];
        let gph_scores = vec![0.1, 0.4, 2.0, -0.7];

        let mut tape = Tape::new();
        let p = tape.param(Matrix::column(&probs));
        let g = tape.param(Matrix::column(&gph_scores));
        let cls_n = cls_loss_node(&mut tape, &y, p).unwrap();
        let dst_n = dst_loss_node(&mut tape, &soft, p).unwrap();
        let gph_n = gph_loss_node(&mut tape, &gph_target, g).unwrap();

        assert!((tape.value(cls_n).scalar().unwrap() - cls_loss(&y, &probs).unwrap()).abs() < 1e-12);
        assert!(
            (tape.value(dst_n).scalar().unwrap() - dst_loss(&soft, &probs[..2]).unwrap()).abs()
                < 1e-12
        );
        assert!(
            (tape.value(gph_n).scalar().unwrap() - gph_loss(&gph_target, &gph_scores).unwrap())
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn gph_gradient_is_zero_for_new_classes() {
        let mut tape = Tape::new();
        let g = tape.param(Matrix::column(&[0.3, -0.2, 5.0, 7.0]));
        let loss = gph_loss_node(&mut tape, &[0.0, 0.0], g).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gg = grads.get(g).unwrap();
        assert_eq!(gg.get(2, 0), 0.0);
        assert_eq!(gg.get(3, 0), 0.0);
        assert!(gg.get(0, 0) != 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let params = vec![
            ("probs_pre".to_string(), Matrix::column(&[0.4, -0.8, 1.3])),
            ("gph".to_string(), Matrix::column(&[0.2, -0.5, 0.9])),
        ];
        let y = vec![1.0, 0.0, 1.0];
        let soft = vec![0.6, 0.1];
        let target = vec![0.3, -0.2];
        let w = LossWeights::new(0.5, 0.4, 2.0).unwrap();
        let report = grad_check(&params, &GradCheckOptions::default(), &|tape, ids| {
            let probs = tape.sigmoid(ids[0]);
            let cls = cls_loss_node(tape, &y, probs)?;
            let dst = dst_loss_node(tape, &soft, probs)?;
            let gph = gph_loss_node(tape, &target, ids[1])?;
            let c = tape.scale(cls, w.lambda1);
            let d = tape.scale(dst, w.lambda2);
            let g = tape.scale(gph, w.lambda3);
            let cd = tape.add(c, d)?;
            tape.add(cd, g)
        })
        .unwrap();
        assert!(report.all_pass(), "{report:?}");
    }
}
