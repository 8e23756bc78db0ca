//! Adam parameter updates and finite-difference gradient checking.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Adam hyperparameters. The defaults follow the training setup this engine
/// targets: `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-4,
        }
    }
}

/// Per-parameter Adam state: first and second moment estimates plus the step
/// counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Matrix,
    v: Matrix,
    step: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        AdamState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != self.m.shape() || grad.shape() != self.m.shape() {
            return Err(Error::Dimension(format!(
                "adam state {}x{} vs param {}x{} vs grad {}x{}",
                self.m.rows(),
                self.m.cols(),
                param.rows(),
                param.cols(),
                grad.rows(),
                grad.cols()
            )));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (m, v, p, g) = (
            self.m.as_mut_slice(),
            self.v.as_mut_slice(),
            param.as_mut_slice(),
            grad.as_slice(),
        );
        for i in 0..g.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }
}

/// Builds the forward graph for a gradient check. Receives one trainable node
/// per parameter, in order, and returns the scalar loss node.
pub type GraphBuilder<'a> = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'a;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.params.iter().all(|p| p.pass)
    }
}

/// Options for [`grad_check`]. `fault` multiplies the analytic gradient of the
/// named parameter by 1.1 before comparing, to prove the check can fail.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    pub fault: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-4,
            step: 1e-5,
            fault: None,
        }
    }
}

/// Compares analytic gradients against central finite differences for every
/// entry of every parameter. Relative error uses `|a - n| / max(1, |a|, |n|)`.
/// Always produces a report; the caller decides what failure means.
pub fn grad_check(
    params: &[(String, Matrix)],
    options: &GradCheckOptions,
    build: &GraphBuilder,
) -> Result<GradCheckReport> {
    let values: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|m| tape.param(m.clone())).collect();
        let root = build(&mut tape, &ids)?;
        tape.value(root).scalar()
    };

    // Analytic gradients from one backward pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = values.iter().map(|m| tape.param(m.clone())).collect();
    let root = build(&mut tape, &ids)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        tolerance: options.tolerance,
        params: Vec::with_capacity(params.len()),
    };
    let mut work = values.clone();
    for (pi, (name, _)) in params.iter().enumerate() {
        let (rows, cols) = values[pi].shape();
        let mut analytic = grads.get_or_zeros(ids[pi], rows, cols);
        if options.fault == Some(pi) {
            analytic = analytic.scale(1.1);
        }
        let mut max_rel = 0.0f64;
        for idx in 0..rows * cols {
            let orig = work[pi].as_slice()[idx];
            work[pi].as_mut_slice()[idx] = orig + options.step;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[idx] = orig - options.step;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic.as_slice()[idx];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            max_rel = max_rel.max(rel);
        }
        report.params.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_rel,
            pass: max_rel < options.tolerance,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_grad_param() -> (String, Matrix) {
        ("w".to_string(), Matrix::from_rows(&[vec![0.3, -0.7]]).unwrap())
    }

    #[test]
    fn adam_defaults_match_training_setup() {
        let c = AdamConfig::default();
        assert_eq!(c.beta1, 0.9);
        assert_eq!(c.beta2, 0.999);
        assert_eq!(c.epsilon, 1e-4);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(2, 2, AdamConfig::default());
        let mut p = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let before = p.clone();
        state.step(&mut p, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_bias_corrected() {
        // With m_hat = g and v_hat = g^2 the first update is lr * g / (|g| + eps).
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(1, 1, cfg);
        let g = 0.5;
        let mut p = Matrix::zeros(1, 1);
        state
            .step(&mut p, &Matrix::from_vec(1, 1, vec![g]).unwrap())
            .unwrap();
        let expected = cfg.learning_rate * g / (g.abs() + cfg.epsilon);
        assert!((p.get(0, 0) + expected).abs() < 1e-15);
    }

    #[test]
    fn adam_shape_mismatch_is_an_error() {
        let mut state = AdamState::new(2, 2, AdamConfig::default());
        let mut p = Matrix::zeros(2, 2);
        let bad = Matrix::zeros(1, 2);
        assert!(state.step(&mut p, &bad).is_err());
    }

    #[test]
    fn linear_map_passes_grad_check() {
        let report = grad_check(
            &[constant_grad_param()],
            &GradCheckOptions::default(),
            &|tape, ids| {
                let x = tape.constant(Matrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap());
                let y = tape.matmul(ids[0], x)?;
                Ok(tape.sum(y))
            },
        )
        .unwrap();
        assert!(report.all_pass());
    }

    #[test]
    fn corrupted_gradient_fails_grad_check() {
        let options = GradCheckOptions {
            fault: Some(0),
            ..GradCheckOptions::default()
        };
        let report = grad_check(&[constant_grad_param()], &options, &|tape, ids| {
            let x = tape.constant(Matrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap());
            let y = tape.matmul(ids[0], x)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(!report.all_pass());
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let params = vec![
            (
                "w1".to_string(),
                Matrix::from_rows(&[vec![0.4, -0.2], vec![0.1, 0.9]]).unwrap(),
            ),
            (
                "w2".to_string(),
                Matrix::from_rows(&[vec![-0.5, 0.3], vec![0.8, -0.1]]).unwrap(),
            ),
            ("w3".to_string(), Matrix::from_rows(&[vec![0.7, -0.6]]).unwrap()),
        ];
        let report = grad_check(&params, &GradCheckOptions::default(), &|tape, ids| {
            let x = tape.constant(Matrix::from_rows(&[vec![1.2], vec![-0.4]]).unwrap());
            let h1 = tape.matmul(ids[0], x)?;
            let a1 = tape.leaky_relu(h1, 0.2);
            let h2 = tape.matmul(ids[1], a1)?;
            let a2 = tape.sigmoid(h2);
            let out = tape.matmul(ids[2], a2)?;
            Ok(tape.sum(out))
        })
        .unwrap();
        assert!(report.all_pass(), "{report:?}");
        for p in &report.params {
            assert!(p.max_rel_err < 1e-4);
        }
    }
}
