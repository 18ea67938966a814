//! Per-sample loss curvature with respect to one neuron's pre-activation.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::activation::Activation;
use crate::nn::dense::DenseLayer;
use crate::nn::loss::softmax_rows;
use crate::nn::network::{Layer, Network};

/// Diagonal of S: entry j is `(1/N) * L''(a_j)` for sample j.
#[derive(Debug, Clone)]
pub struct CurvatureDiag {
    s: Vec<f64>,
}

impl CurvatureDiag {
    pub fn from_values(s: Vec<f64>) -> Self {
        Self { s }
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Analytic curvature for a neuron feeding the softmax directly: with
/// cross-entropy, `L''(a_i) = p_i (1 - p_i)` per sample, independent of the
/// label. Entries land in `[0, 1/(4N)]`.
pub fn output_curvature(logits: &Matrix, neuron: usize) -> Result<CurvatureDiag> {
    if neuron >= logits.cols() {
        return Err(Error::ShapeMismatch {
            context: "output_curvature",
            expected: format!("neuron < {}", logits.cols()),
            actual: format!("neuron {neuron}"),
        });
    }
    let n = logits.rows() as f64;
    let probs = softmax_rows(logits);
    let s = (0..logits.rows())
        .map(|j| {
            let p = probs.get(j, neuron);
            p * (1.0 - p) / n
        })
        .collect();
    Ok(CurvatureDiag::from_values(s))
}

/// Curvature for a hidden neuron by second-order central differences on its
/// pre-activation, holding everything upstream fixed. Samples whose
/// difference stencil could cross a ReLU kink (at the probed neuron or
/// downstream) are skipped: their entry is zero and they are flagged.
///
/// Only works on stacks of dense layers: rows must flow independently, which
/// a downstream batch-norm layer would break.
pub fn hidden_curvature_fd(
    net: &Network,
    batch: &Matrix,
    labels: &[usize],
    layer_idx: usize,
    neuron: usize,
    delta: f64,
) -> Result<(CurvatureDiag, Vec<bool>)> {
    let dense = dense_stack(net)?;
    if layer_idx >= dense.len() {
        return Err(Error::ShapeMismatch {
            context: "hidden_curvature_fd",
            expected: format!("layer index < {}", dense.len()),
            actual: format!("layer index {layer_idx}"),
        });
    }
    // Forward pass storing each layer's input.
    let mut activations: Vec<Matrix> = vec![batch.clone()];
    for layer in &dense {
        let prev = activations.last().expect("nonempty");
        let mut pre = prev.matmul(&layer.weights.transpose())?;
        for r in 0..pre.rows() {
            let row = pre.row_mut(r);
            for (c, x) in row.iter_mut().enumerate() {
                *x += layer.bias[c];
            }
        }
        let mut act = pre.clone();
        for x in act.data_mut() {
            *x = layer.activation.apply(*x);
        }
        activations.push(act);
    }

    let n = batch.rows();
    let mut s = vec![0.0; n];
    let mut skipped = vec![false; n];
    for j in 0..n {
        let h_j = activations[layer_idx].row(j).to_vec();
        let a0 = preact(&dense[layer_idx], &h_j)[neuron];
        if stencil_crosses_kink(&dense, layer_idx, neuron, &h_j, delta) {
            skipped[j] = true;
            continue;
        }
        let f = |a: f64| sample_loss_from_preact(&dense, layer_idx, neuron, &h_j, a, labels[j]);
        let center = f(a0);
        let plus = f(a0 + delta);
        let minus = f(a0 - delta);
        s[j] = (plus - 2.0 * center + minus) / (delta * delta) / n as f64;
    }
    Ok((CurvatureDiag::from_values(s), skipped))
}

fn dense_stack(net: &Network) -> Result<Vec<DenseLayer>> {
    net.layers
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => Ok(d.clone()),
            _ => Err(Error::ShapeMismatch {
                context: "hidden_curvature_fd",
                expected: "dense-only network".to_string(),
                actual: "non-dense layer".to_string(),
            }),
        })
        .collect()
}

/// `W h + b` for a single feature vector.
fn preact(layer: &DenseLayer, h: &[f64]) -> Vec<f64> {
    (0..layer.n_out())
        .map(|i| {
            layer
                .weights
                .row(i)
                .iter()
                .zip(h)
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + layer.bias[i]
        })
        .collect()
}

/// Conservative kink detection: propagates the largest perturbation a
/// `delta` nudge of the probed pre-activation can cause (ReLU is
/// 1-Lipschitz, dense layers scale by the row 1-norm) and flags any ReLU
/// pre-activation within that margin of zero.
fn stencil_crosses_kink(
    dense: &[DenseLayer],
    layer_idx: usize,
    neuron: usize,
    h_j: &[f64],
    delta: f64,
) -> bool {
    let probed = &dense[layer_idx];
    let pre0 = preact(probed, h_j);
    if probed.activation == Activation::Relu && pre0[neuron].abs() <= 4.0 * delta {
        return true;
    }
    let mut h: Vec<f64> = pre0.iter().map(|&x| probed.activation.apply(x)).collect();
    let mut perturb = vec![0.0; h.len()];
    perturb[neuron] = delta;
    for layer in &dense[layer_idx + 1..] {
        let pre = preact(layer, &h);
        let mut next_perturb = vec![0.0; pre.len()];
        for i in 0..pre.len() {
            let bound: f64 = layer
                .weights
                .row(i)
                .iter()
                .zip(&perturb)
                .map(|(w, p)| w.abs() * p)
                .sum();
            if layer.activation == Activation::Relu && pre[i].abs() <= 4.0 * bound {
                return true;
            }
            next_perturb[i] = bound;
        }
        h = pre.iter().map(|&x| layer.activation.apply(x)).collect();
        perturb = next_perturb;
    }
    false
}

/// Per-sample loss as a function of one pre-activation override.
fn sample_loss_from_preact(
    dense: &[DenseLayer],
    layer_idx: usize,
    neuron: usize,
    h_j: &[f64],
    a: f64,
    label: usize,
) -> f64 {
    let layer = &dense[layer_idx];
    let mut pre = preact(layer, h_j);
    pre[neuron] = a;
    let mut h: Vec<f64> = pre.iter().map(|&x| layer.activation.apply(x)).collect();
    for l in &dense[layer_idx + 1..] {
        h = preact(l, &h)
            .iter()
            .map(|&x| l.activation.apply(x))
            .collect();
    }
    // Softmax cross-entropy on the final logits row.
    let max = h.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let sum: f64 = h.iter().map(|&x| (x - max).exp()).sum();
    -(h[label] - max - sum.ln())
}
