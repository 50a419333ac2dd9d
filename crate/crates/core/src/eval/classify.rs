//! Multinomial logistic regression with an L2 penalty, fitted by L-BFGS.
//!
//! The objective is `C·Σᵢ CE(xᵢ, yᵢ) + ½‖W‖²` with the bias left
//! unregularized.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse regularization strength.
    pub c: f64,
    /// Converged once the largest gradient component falls to this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub history: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            c: 1.0,
            tolerance: 1e-6,
            max_iter: 500,
            history: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutcome {
    pub predictions: Vec<usize>,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Fitted weights: `features × classes` plus one bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogisticModel {
    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| {
                // first maximum wins
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

struct Problem<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    classes: usize,
    c: f64,
}

impl Problem<'_> {
    fn unpack(&self, theta: &Array1<f64>) -> LogisticModel {
        let d = self.x.ncols();
        let k = self.classes;
        let weight = theta.slice(s![..d * k]).to_owned().into_shape_with_order((d, k)).expect("sized");
        let bias = theta.slice(s![d * k..]).to_owned();
        LogisticModel { weight, bias }
    }

    fn value_and_grad(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        let model = self.unpack(theta);
        let mut logits = model.logits(self.x);
        let mut ce = 0.0;
        for (mut row, &label) in logits.rows_mut().into_iter().zip(self.y) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let z = row.sum();
            ce += z.ln() - (row[label].ln());
            row /= z;
            row[label] -= 1.0;
        }
        // logits now hold softmax − one-hot
        let residual = logits * self.c;
        let grad_w = self.x.t().dot(&residual) + &model.weight;
        let grad_b = residual.sum_axis(Axis(0));
        let value = self.c * ce + 0.5 * model.weight.iter().map(|w| w * w).sum::<f64>();
        let mut grad = Array1::zeros(theta.len());
        let split = grad_w.len();
        grad.slice_mut(s![..split]).assign(&Array1::from_iter(grad_w.iter().copied()));
        grad.slice_mut(s![split..]).assign(&grad_b);
        (value, grad)
    }
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

/// Fits the classifier. `classes` must exceed every label.
pub fn fit_logistic(x: &Array2<f64>, y: &[usize], classes: usize, config: &LogisticConfig) -> Result<(LogisticModel, HeadOutcome)> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no training rows for the logistic head".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {classes} classes")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "logistic_head" });
    }
    let problem = Problem { x, y, classes, c: config.c };
    let mut theta = Array1::<f64>::zeros(x.ncols() * classes + classes);
    let (mut f, mut g) = problem.value_and_grad(&theta);
    let mut memory: VecDeque<(Array1<f64>, Array1<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = max_abs(&g) <= config.tolerance;

    while !converged && iterations < config.max_iter {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * s.dot(&q);
            q.scaled_add(-a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q *= 1.0 / max_abs(&g).max(1.0);
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.scaled_add(a - b, s);
        }
        let mut direction = -q;
        let mut slope = g.dot(&direction);
        if slope >= 0.0 {
            memory.clear();
            direction = -g.clone();
            slope = -g.dot(&g);
        }

        // backtracking Armijo search
        let mut step = 1.0;
        let accepted = loop {
            let candidate = &theta + &(&direction * step);
            let (fc, gc) = problem.value_and_grad(&candidate);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                break Some((candidate, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        iterations += 1;
        let Some((next, fn_, gn)) = accepted else {
            break;
        };
        let s = &next - &theta;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * yv.dot(&yv).max(f64::MIN_POSITIVE) {
            if memory.len() == config.history {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        let stalled = (f - fn_).abs() <= f64::EPSILON * f.abs().max(fn_.abs()).max(1.0);
        theta = next;
        f = fn_;
        g = gn;
        converged = max_abs(&g) <= config.tolerance;
        if stalled && !converged {
            break;
        }
    }

    let model = problem.unpack(&theta);
    let outcome = HeadOutcome {
        predictions: model.predict(x),
        converged,
        grad_norm: max_abs(&g),
        iterations,
    };
    Ok((model, outcome))
}

/// Fits on `(train_z, train_y)` and predicts every row of `eval_z`.
pub fn logistic_head(
    train_z: &Array2<f64>,
    train_y: &[usize],
    eval_z: &Array2<f64>,
    classes: usize,
    config: &LogisticConfig,
) -> Result<HeadOutcome> {
    if train_z.ncols() != eval_z.ncols() {
        return Err(Error::Shape {
            op: "logistic_head",
            left: train_z.dim(),
            right: eval_z.dim(),
        });
    }
    let (model, fit) = fit_logistic(train_z, train_y, classes, config)?;
    if !fit.converged {
        log::warn!(
            "logistic head stopped after {} iterations with gradient {:.3e}",
            fit.iterations,
            fit.grad_norm
        );
    }
    Ok(HeadOutcome {
        predictions: model.predict(eval_z),
        ..fit
    })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}
