//! Linear probe: L2-regularised multinomial logistic regression on frozen
//! features, trained full-batch with accelerated gradient descent.
//!
//! Features are standardised with training statistics; the bias is not
//! regularised. The objective is strongly convex, so the optimum (and the
//! reported accuracies) do not depend on the starting point.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::train::mlp::{accuracy, cross_entropy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub reg: f64,
    /// Stop when the gradient norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            reg: 1e-3,
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(d + 1) x C`, last row is the bias.
    weights: Matrix,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub train_acc: f64,
    pub val_acc: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn standardise(x: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    let (n, d) = x.shape();
    let mut out = Matrix::zeros(n, d + 1);
    for i in 0..n {
        let (src, dst) = (x.row(i), out.row_mut(i));
        for k in 0..d {
            dst[k] = (src[k] - mean[k]) / scale[k];
        }
        dst[d] = 1.0;
    }
    out
}

fn objective(x: &Matrix, labels: &[usize], w: &Matrix, reg: f64) -> Result<(f64, Matrix)> {
    let (ce, dlogits) = cross_entropy(&x.matmul(w)?, labels)?;
    let mut grad = x.matmul_tn(&dlogits)?;
    let d = w.rows() - 1;
    let mut penalty = 0.0;
    for k in 0..d {
        for c in 0..w.cols() {
            penalty += w[(k, c)] * w[(k, c)];
            grad[(k, c)] += reg * w[(k, c)];
        }
    }
    Ok((ce + 0.5 * reg * penalty, grad))
}

/// Largest eigenvalue of `X^T X / n` by power iteration.
fn gram_spectral_norm(x: &Matrix) -> f64 {
    let (n, d) = x.shape();
    let mut v = Matrix::filled(d, 1, 1.0 / math::sqrt(d as f64));
    let mut est = 0.0;
    for _ in 0..100 {
        let xv = x.matmul(&v).expect("conformable");
        let w = x.matmul_tn(&xv).expect("conformable");
        let norm = w.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm / n as f64;
        v = w.scale(1.0 / norm);
        if (next - est).abs() <= 1e-9 * next {
            return next;
        }
        est = next;
    }
    est
}

impl LinearProbe {
    pub fn fit(features: &Matrix, labels: &[usize], classes: usize, cfg: ProbeConfig) -> Result<Self> {
        let (n, d) = features.shape();
        if n == 0 || labels.len() != n {
            return Err(Error::Shape {
                op: "linear_probe",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &x) in mean.iter_mut().zip(features.row(i)) {
                *m += x / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for i in 0..n {
            for k in 0..d {
                let c = features[(i, k)] - mean[k];
                scale[k] += c * c / n as f64;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { math::sqrt(*s) } else { 1.0 };
        }
        let x = standardise(features, &mean, &scale);
        let step = 1.0 / (0.5 * gram_spectral_norm(&x) + cfg.reg).max(1e-12);

        let mut w = Matrix::zeros(d + 1, classes);
        let mut y = w.clone();
        let mut t = 1.0;
        let mut best = (f64::INFINITY, w.clone(), f64::INFINITY);
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..cfg.max_iter {
            iterations = it + 1;
            let (f, g) = objective(&x, labels, &y, cfg.reg)?;
            let gn = g.frobenius_norm();
            if f < best.0 {
                best = (f, y.clone(), gn);
            }
            if gn < cfg.tol {
                best = (f, y.clone(), gn);
                converged = true;
                break;
            }
            let mut w_next = y.clone();
            w_next.axpy(-step, &g)?;
            let step_dir = w_next.sub(&w)?;
            // restart momentum when it points uphill
            if g.frobenius_dot(&step_dir)? > 0.0 {
                t = 1.0;
            }
            let t_next = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
            y = w_next.clone();
            y.axpy((t - 1.0) / t_next, &step_dir)?;
            w = w_next;
            t = t_next;
        }
        Ok(Self {
            mean,
            scale,
            weights: best.1,
            iterations,
            converged,
            grad_norm: best.2,
        })
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "probe_logits",
                left: features.shape(),
                right: (self.weights.rows() - 1, self.weights.cols()),
            });
        }
        standardise(features, &self.mean, &self.scale).matmul(&self.weights)
    }

    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        Ok(accuracy(&self.logits(features)?, labels))
    }
}

/// Fits on the training features and scores both splits.
pub fn linear_probe(
    train_features: &Matrix,
    train_labels: &[usize],
    val_features: &Matrix,
    val_labels: &[usize],
    classes: usize,
    cfg: ProbeConfig,
) -> Result<ProbeResult> {
    let probe = LinearProbe::fit(train_features, train_labels, classes, cfg)?;
    Ok(ProbeResult {
        train_acc: probe.accuracy(train_features, train_labels)?,
        val_acc: probe.accuracy(val_features, val_labels)?,
        converged: probe.converged,
        iterations: probe.iterations,
    })
}
