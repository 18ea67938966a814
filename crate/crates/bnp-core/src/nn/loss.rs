//! Softmax cross-entropy over a logits matrix (one row per example).

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Row-wise softmax with the usual max-shift for stability.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Mean cross-entropy loss and its gradient with respect to the logits.
/// The gradient already carries the 1/N factor: `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "softmax_cross_entropy",
            expected: format!("{} labels", logits.rows()),
            actual: format!("{} labels", labels.len()),
        });
    }
    let n = logits.rows() as f64;
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for r in 0..logits.rows() {
        let y = labels[r];
        // Clamp to avoid -inf on a fully saturated wrong prediction.
        loss -= probs.get(r, y).max(1e-300).ln();
        grad.set(r, y, grad.get(r, y) - 1.0);
    }
    Ok((loss / n, grad.scale(1.0 / n)))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (c, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = c;
            }
        }
        if best == labels[r] {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}
