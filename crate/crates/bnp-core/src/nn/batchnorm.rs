//! Batch normalization layer.
//!
//! Train mode normalizes by the batch mean and variance (divisor N, plus
//! `eps` inside the square root), then applies the affine re-scale/re-shift,
//! and updates running statistics by exponential moving average with
//! momentum `rho`. Inference mode normalizes with the running statistics.
//!
//! For convolution feature maps the same code runs on the `(N*r*s) x c`
//! channel view, which makes the statistics per-channel over the batch and
//! both spatial dimensions.

use crate::error::{Error, Result};
use crate::linalg::{column_stats, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
    /// Treat the batch statistics as constants during backprop.
    pub stop_grad_stats: bool,
    /// When false the layer is the fixed transform with gamma = 1, beta = 0
    /// and reports no parameter gradients.
    pub affine: bool,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    pass: u64,
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(n_features: usize, rho: f64, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; n_features],
            beta: vec![0.0; n_features],
            running_mean: vec![0.0; n_features],
            running_var: vec![1.0; n_features],
            rho,
            eps,
            stop_grad_stats: false,
            affine: true,
            cache: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.gamma.len()
    }

    /// `n_examples` is the true mini-batch size; for channel views of
    /// convolution maps it differs from the row count.
    pub fn forward(
        &mut self,
        input: &Matrix,
        n_examples: usize,
        mode: Mode,
        pass: u64,
    ) -> Result<Matrix> {
        if input.cols() != self.n_features() {
            return Err(Error::ShapeMismatch {
                context: "BatchNormLayer::forward",
                expected: format!("{} features", self.n_features()),
                actual: format!("{} features", input.cols()),
            });
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n_examples < 2 {
                    return Err(Error::BnUndefinedAtBatchSize1);
                }
                let (mean, var) = column_stats(input)?;
                for c in 0..self.n_features() {
                    self.running_mean[c] =
                        self.rho * self.running_mean[c] + (1.0 - self.rho) * mean[c];
                    self.running_var[c] =
                        self.rho * self.running_var[c] + (1.0 - self.rho) * var[c];
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = input.clone();
        for r in 0..normalized.rows() {
            let row = normalized.row_mut(r);
            for c in 0..row.len() {
                row[c] = (row[c] - mean[c]) * inv_std[c];
            }
        }
        let mut out = normalized.clone();
        if self.affine {
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                for c in 0..row.len() {
                    row[c] = self.gamma[c] * row[c] + self.beta[c];
                }
            }
        }
        self.cache = Some(BnCache {
            pass,
            normalized,
            inv_std,
        });
        Ok(out)
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`. Parameter gradients are
    /// zero-length when the layer is not affine.
    pub fn backward(
        &self,
        grad_out: &Matrix,
        pass: u64,
    ) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
        let cache = self.cache.as_ref().ok_or(Error::StaleCache)?;
        if cache.pass != pass || grad_out.rows() != cache.normalized.rows() {
            return Err(Error::StaleCache);
        }
        let rows = grad_out.rows();
        let cols = grad_out.cols();

        let mut grad_gamma = vec![0.0; if self.affine { cols } else { 0 }];
        let mut grad_beta = vec![0.0; if self.affine { cols } else { 0 }];
        if self.affine {
            for r in 0..rows {
                for c in 0..cols {
                    grad_gamma[c] += grad_out.get(r, c) * cache.normalized.get(r, c);
                    grad_beta[c] += grad_out.get(r, c);
                }
            }
        }

        // d_norm = grad_out * gamma (or grad_out directly when not affine).
        let mut d_norm = grad_out.clone();
        if self.affine {
            for r in 0..rows {
                let row = d_norm.row_mut(r);
                for c in 0..cols {
                    row[c] *= self.gamma[c];
                }
            }
        }

        let grad_in = if self.stop_grad_stats {
            let mut g = d_norm;
            for r in 0..rows {
                let row = g.row_mut(r);
                for c in 0..cols {
                    row[c] *= cache.inv_std[c];
                }
            }
            g
        } else {
            // Full gradient through the batch mean and variance:
            // dx = inv_std * (d_norm - mean(d_norm) - x_hat * mean(d_norm ⊙ x_hat))
            let n = rows as f64;
            let mut mean_dn = vec![0.0; cols];
            let mut mean_dn_xhat = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    mean_dn[c] += d_norm.get(r, c);
                    mean_dn_xhat[c] += d_norm.get(r, c) * cache.normalized.get(r, c);
                }
            }
            for c in 0..cols {
                mean_dn[c] /= n;
                mean_dn_xhat[c] /= n;
            }
            let mut g = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let val = cache.inv_std[c]
                        * (d_norm.get(r, c)
                            - mean_dn[c]
                            - cache.normalized.get(r, c) * mean_dn_xhat[c]);
                    g.set(r, c, val);
                }
            }
            g
        };
        Ok((grad_in, grad_gamma, grad_beta))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
