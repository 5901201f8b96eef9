//! Weighted, L2-regularized logistic regression fit by gradient descent with
//! a backtracking (Armijo) line search.
//!
//! The objective is the weight-normalized negative log-likelihood plus
//! `l2/2 * |coef|^2`; the intercept is not penalized. Normalizing by the
//! total weight makes duplicating an example equivalent to doubling its
//! weight.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 2000,
            tol: 1e-7,
        }
    }
}

impl LogisticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("logistic: l2 must be finite and >= 0".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("logistic: tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub k: usize,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl Logistic {
    pub fn new(coef: Vec<f64>, intercept: f64) -> Self {
        Self {
            k: coef.len(),
            coef,
            intercept,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.coef, x) + self.intercept)
    }
}

/// Objective value and gradient at `params = [coef..., intercept]`.
pub fn logistic_objective(examples: &[LabeledExample], l2: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let k = params.len() - 1;
    let (coef, b) = (&params[..k], params[k]);
    let total: f64 = examples.iter().map(|e| e.weight).sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; k + 1];
    for e in examples {
        let eta = dot(coef, &e.x) + b;
        let y = if e.label { 1.0 } else { 0.0 };
        loss += e.weight * (softplus(eta) - y * eta);
        let r = e.weight * (sigmoid(eta) - y);
        for (g, x) in grad[..k].iter_mut().zip(&e.x) {
            *g += r * x;
        }
        grad[k] += r;
    }
    loss /= total;
    for g in grad.iter_mut() {
        *g /= total;
    }
    for j in 0..k {
        loss += 0.5 * l2 * coef[j] * coef[j];
        grad[j] += l2 * coef[j];
    }
    (loss, grad)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Fit from a zero start. The procedure is deterministic; there is no
/// random initialization.
pub fn fit_logistic(examples: &[LabeledExample], params: &LogisticParams) -> Result<Logistic> {
    params.validate()?;
    if examples.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 examples to fit".into()));
    }
    let k = examples[0].x.len();
    for e in examples {
        if e.x.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: e.x.len(),
            });
        }
        if !e.x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("example {} has a non-finite feature", e.id)));
        }
        if !(e.weight > 0.0 && e.weight.is_finite()) {
            return Err(Error::InvalidInput(format!("example {} has an invalid weight", e.id)));
        }
    }

    let mut theta = vec![0.0; k + 1];
    let (mut loss, mut grad) = logistic_objective(examples, params.l2, &theta);
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..params.max_iter {
        if max_norm(&grad) < params.tol {
            break;
        }
        // Barzilai-Borwein trial step, then backtrack until sufficient decrease.
        if let Some((p_theta, p_grad)) = &prev {
            let s: Vec<f64> = theta.iter().zip(p_theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(p_grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = (dot(&s, &s) / sy).clamp(1e-10, 1e10);
            }
        }
        let g2 = dot(&grad, &grad);
        let mut accepted = None;
        while step > 1e-20 {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (c_loss, c_grad) = logistic_objective(examples, params.l2, &cand);
            if c_loss.is_finite() && c_loss <= loss - 1e-4 * step * g2 {
                accepted = Some((cand, c_loss, c_grad));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, c_loss, c_grad)) = accepted else { break };
        prev = Some((std::mem::replace(&mut theta, cand), std::mem::replace(&mut grad, c_grad)));
        loss = c_loss;
    }
    let intercept = theta.pop().unwrap_or(0.0);
    Ok(Logistic::new(theta, intercept))
}
