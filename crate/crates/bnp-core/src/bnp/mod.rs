//! Gradient preconditioning from batch statistics.
//!
//! One step takes the layer's input-activation statistics (running averages
//! by default), stabilizes the variance, and transforms the raw weight/bias
//! gradients so that the update is the one a normalized reparameterization
//! of the layer would have produced. The in-place update formulas here are
//! algebraically the product `(1/q^2) * P P^T * g` applied per output
//! neuron to the stacked `[grad_bias; grad_weights_row]` vector, where
//! `P = U D` recenters by the mean and rescales by the inverse standard
//! deviation; the tests pin that equality against an explicit matrix
//! product.
//!
//! Dense layers use per-input-feature statistics; convolution layers use
//! per-input-channel statistics over the batch and both spatial dimensions,
//! with every kernel position sharing its channel's mean/variance.

use crate::error::{Error, Result};
use crate::linalg::{column_stats, Matrix};
use crate::nn::tensor::{KernelTensor, Tensor4};

/// Shape metadata needed by the q normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerShape {
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Conv {
        k: usize,
        c_in: usize,
        c_out: usize,
        r: usize,
        s: usize,
    },
}

impl LayerShape {
    /// Length of the statistics vectors: input features for dense layers,
    /// input channels for convolution layers.
    pub fn stat_len(&self) -> usize {
        match self {
            LayerShape::Dense { n_in, .. } => *n_in,
            LayerShape::Conv { c_in, .. } => *c_in,
        }
    }

    /// Squared norm-equalization factor for a given mini-batch size.
    pub fn q_squared(&self, n_batch: usize) -> f64 {
        match self {
            LayerShape::Dense { n_in, .. } => q_squared_dense(*n_in, n_batch),
            LayerShape::Conv { k, c_in, r, s, .. } => q_squared_conv(*k, *c_in, n_batch, *r, *s),
        }
    }
}

/// Dense rule: `q^2 = max(n_in / N, 1)`.
pub fn q_squared_dense(n_in: usize, n_batch: usize) -> f64 {
    (n_in as f64 / n_batch as f64).max(1.0)
}

/// Convolution rule: `q^2 = max(c_in * k^2 / N, sqrt(r * s))`.
pub fn q_squared_conv(k: usize, c_in: usize, n_batch: usize, r: usize, s: usize) -> f64 {
    ((c_in * k * k) as f64 / n_batch as f64).max(((r * s) as f64).sqrt())
}

/// Per-layer running statistics and hyperparameters.
#[derive(Debug, Clone)]
pub struct BnpState {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub rho: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Precondition with the running averages (default); when false, use the
    /// statistics of the most recent batch instead.
    pub use_running_stats: bool,
    pub shape: LayerShape,
    batch_mu: Vec<f64>,
    batch_sigma2: Vec<f64>,
}

pub const DEFAULT_RHO: f64 = 0.99;
pub const DEFAULT_EPS1: f64 = 1e-2;
pub const DEFAULT_EPS2: f64 = 1e-4;

impl BnpState {
    /// Fresh state: mu = 0, sigma^2 = 1.
    pub fn new(shape: LayerShape, rho: f64, eps1: f64, eps2: f64) -> Self {
        let len = shape.stat_len();
        Self {
            mu: vec![0.0; len],
            sigma2: vec![1.0; len],
            rho,
            eps1,
            eps2,
            use_running_stats: true,
            shape,
            batch_mu: vec![0.0; len],
            batch_sigma2: vec![1.0; len],
        }
    }

    pub fn with_defaults(shape: LayerShape) -> Self {
        Self::new(shape, DEFAULT_RHO, DEFAULT_EPS1, DEFAULT_EPS2)
    }

    /// Folds a dense layer's input batch (`N x n_in`) into the running
    /// statistics. For a single-example batch the variance is estimated
    /// around the running mean instead of the (degenerate) batch mean.
    pub fn update_stats_dense(&mut self, batch: &Matrix) -> Result<()> {
        let n_in = match &self.shape {
            LayerShape::Dense { n_in, .. } => *n_in,
            LayerShape::Conv { .. } => {
                return Err(Error::ShapeMismatch {
                    context: "BnpState::update_stats_dense",
                    expected: "dense layer shape".to_string(),
                    actual: "conv layer shape".to_string(),
                })
            }
        };
        if batch.cols() != n_in || batch.rows() == 0 {
            return Err(Error::ShapeMismatch {
                context: "BnpState::update_stats_dense",
                expected: format!("N>=1 x {n_in}"),
                actual: format!("{}x{}", batch.rows(), batch.cols()),
            });
        }
        let (mu_h, sigma2_h) = if batch.rows() == 1 {
            let h = batch.row(0);
            let mu_h: Vec<f64> = h.to_vec();
            let sigma2_h: Vec<f64> = h
                .iter()
                .zip(&self.mu)
                .map(|(&x, &m)| (x - m) * (x - m))
                .collect();
            (mu_h, sigma2_h)
        } else {
            column_stats(batch)?
        };
        self.fold(&mu_h, &sigma2_h);
        Ok(())
    }

    /// Folds a convolution layer's input batch into the running statistics:
    /// per-channel mean/variance over batch and both spatial dimensions.
    pub fn update_stats_conv(&mut self, batch: &Tensor4) -> Result<()> {
        let c_in = match &self.shape {
            LayerShape::Conv { c_in, .. } => *c_in,
            LayerShape::Dense { .. } => {
                return Err(Error::ShapeMismatch {
                    context: "BnpState::update_stats_conv",
                    expected: "conv layer shape".to_string(),
                    actual: "dense layer shape".to_string(),
                })
            }
        };
        let (_, _, _, c) = batch.shape();
        if c != c_in {
            return Err(Error::ShapeMismatch {
                context: "BnpState::update_stats_conv",
                expected: format!("{c_in} channels"),
                actual: format!("{c} channels"),
            });
        }
        // Even N = 1 has r*s spatial samples per channel, so the plain
        // per-channel statistics stay meaningful.
        let (mu_h, sigma2_h) = column_stats(&batch.to_channel_matrix())?;
        self.fold(&mu_h, &sigma2_h);
        Ok(())
    }

    fn fold(&mut self, mu_h: &[f64], sigma2_h: &[f64]) {
        self.batch_mu.copy_from_slice(mu_h);
        self.batch_sigma2.copy_from_slice(sigma2_h);
        for (m, &mh) in self.mu.iter_mut().zip(mu_h) {
            *m = self.rho * *m + (1.0 - self.rho) * mh;
        }
        for (v, &vh) in self.sigma2.iter_mut().zip(sigma2_h) {
            *v = self.rho * *v + (1.0 - self.rho) * vh;
        }
    }

    /// The statistics the preconditioner will divide by, before
    /// stabilization.
    pub fn effective_stats(&self) -> (&[f64], &[f64]) {
        if self.use_running_stats {
            (&self.mu, &self.sigma2)
        } else {
            (&self.batch_mu, &self.batch_sigma2)
        }
    }

    /// `sigma~^2 = sigma^2 + eps1 * max(sigma^2) + eps2`, elementwise.
    pub fn stabilized_variance(&self) -> Vec<f64> {
        let (_, sigma2) = self.effective_stats();
        stabilize_variance(sigma2, self.eps1, self.eps2)
    }

    /// Preconditions dense-layer gradients. `grad_w` is `n_out x n_in`
    /// (matching the weight layout), `grad_b` has length `n_out`.
    pub fn precondition_dense(
        &self,
        grad_w: &Matrix,
        grad_b: &[f64],
        n_batch: usize,
    ) -> Result<(Matrix, Vec<f64>)> {
        self.precondition_dense_with_q2(grad_w, grad_b, self.shape.q_squared(n_batch))
    }

    /// Same transform with an explicit q^2 (the equivalence analysis uses 1).
    pub fn precondition_dense_with_q2(
        &self,
        grad_w: &Matrix,
        grad_b: &[f64],
        q2: f64,
    ) -> Result<(Matrix, Vec<f64>)> {
        let (n_in, n_out) = match &self.shape {
            LayerShape::Dense { n_in, n_out } => (*n_in, *n_out),
            LayerShape::Conv { .. } => {
                return Err(Error::ShapeMismatch {
                    context: "BnpState::precondition_dense",
                    expected: "dense layer shape".to_string(),
                    actual: "conv layer shape".to_string(),
                })
            }
        };
        if grad_w.rows() != n_out || grad_w.cols() != n_in || grad_b.len() != n_out {
            return Err(Error::ShapeMismatch {
                context: "BnpState::precondition_dense",
                expected: format!("{n_out}x{n_in} weights, {n_out} biases"),
                actual: format!("{}x{} weights, {} biases", grad_w.rows(), grad_w.cols(), grad_b.len()),
            });
        }
        let (mu, _) = self.effective_stats();
        let mu = mu.to_vec();
        let sigma_tilde2 = self.stabilized_variance();

        let mut gw = grad_w.clone();
        let mut gb = grad_b.to_vec();
        for i in 0..n_out {
            let row = gw.row_mut(i);
            let bi = gb[i];
            for j in 0..n_in {
                row[j] = (row[j] - mu[j] * bi) / (q2 * sigma_tilde2[j]);
            }
            // The correction sum uses the already-updated weight gradients,
            // which carry the 1/q^2 factor.
            let mut corr = 0.0;
            for j in 0..n_in {
                corr += row[j] * mu[j];
            }
            gb[i] = bi / q2 - corr;
        }
        Ok((gw, gb))
    }

    /// Preconditions convolution-layer gradients; every kernel position of
    /// input channel `p` shares that channel's statistics.
    pub fn precondition_conv(
        &self,
        grad_kernel: &KernelTensor,
        grad_b: &[f64],
        n_batch: usize,
    ) -> Result<(KernelTensor, Vec<f64>)> {
        self.precondition_conv_with_q2(grad_kernel, grad_b, self.shape.q_squared(n_batch))
    }

    pub fn precondition_conv_with_q2(
        &self,
        grad_kernel: &KernelTensor,
        grad_b: &[f64],
        q2: f64,
    ) -> Result<(KernelTensor, Vec<f64>)> {
        let (k, c_in, c_out) = match &self.shape {
            LayerShape::Conv { k, c_in, c_out, .. } => (*k, *c_in, *c_out),
            LayerShape::Dense { .. } => {
                return Err(Error::ShapeMismatch {
                    context: "BnpState::precondition_conv",
                    expected: "conv layer shape".to_string(),
                    actual: "dense layer shape".to_string(),
                })
            }
        };
        if grad_kernel.k() != k
            || grad_kernel.c_in() != c_in
            || grad_kernel.c_out() != c_out
            || grad_b.len() != c_out
        {
            return Err(Error::ShapeMismatch {
                context: "BnpState::precondition_conv",
                expected: format!("{k}x{k}x{c_in}x{c_out} kernel, {c_out} biases"),
                actual: format!(
                    "{}x{}x{}x{} kernel, {} biases",
                    grad_kernel.k(),
                    grad_kernel.k(),
                    grad_kernel.c_in(),
                    grad_kernel.c_out(),
                    grad_b.len()
                ),
            });
        }
        let (mu, _) = self.effective_stats();
        let mu = mu.to_vec();
        let sigma_tilde2 = self.stabilized_variance();

        let mut gk = grad_kernel.clone();
        let mut gb = grad_b.to_vec();
        for d in 0..c_out {
            let bd = gb[d];
            for p in 0..c_in {
                for j in 0..k {
                    for v in 0..k {
                        let g = gk.get(v, j, p, d);
                        gk.set(v, j, p, d, (g - mu[p] * bd) / (q2 * sigma_tilde2[p]));
                    }
                }
            }
            let mut corr = 0.0;
            for p in 0..c_in {
                for j in 0..k {
                    for v in 0..k {
                        corr += mu[p] * gk.get(v, j, p, d);
                    }
                }
            }
            gb[d] = bd / q2 - corr;
        }
        Ok((gk, gb))
    }
}

/// Variance stabilization used wherever the scaling matrix divides.
pub fn stabilize_variance(sigma2: &[f64], eps1: f64, eps2: f64) -> Vec<f64> {
    let max = sigma2.iter().fold(0.0f64, |m, &v| m.max(v));
    sigma2.iter().map(|&v| v + eps1 * max + eps2).collect()
}
