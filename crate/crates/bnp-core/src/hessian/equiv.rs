//! One-step equivalence between batch-norm training and preconditioned
//! training of the underlying vanilla network.
//!
//! Take a vanilla dense network and a batch. Insert a plain normalization
//! layer (gamma = 1, beta = 0, eps = 0, statistics treated as constants in
//! backprop) in front of the final dense layer, re-parameterizing that
//! layer so the two networks compute identical outputs. One SGD step on the
//! batch-norm network, mapped back to vanilla parameters, must coincide
//! with one preconditioned step (batch statistics, eps1 = eps2 = 0, q = 1)
//! on the vanilla network.

use crate::bnp::{BnpState, LayerShape};
use crate::error::{Error, Result};
use crate::linalg::{column_stats, Matrix};
use crate::nn::batchnorm::BatchNormLayer;
use crate::nn::dense::DenseLayer;
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::network::{Layer, LayerGrad, Network, Value};
use crate::nn::sgd::SgdOptimizer;

/// Runs both paths and returns the largest relative parameter discrepancy.
/// The final dense layer of `net` is read as the batch-norm network's
/// `(W, b)`; the vanilla network's parameters are derived from it.
pub fn bn_step_equivalence(
    net: &Network,
    batch: &Matrix,
    labels: &[usize],
    lr: f64,
) -> Result<f64> {
    let last = net.layers.len() - 1;
    for layer in &net.layers {
        if !matches!(layer, Layer::Dense(_)) {
            return Err(Error::ShapeMismatch {
                context: "bn_step_equivalence",
                expected: "dense-only network".to_string(),
                actual: "non-dense layer".to_string(),
            });
        }
    }

    // Batch statistics of the final layer's input (the upstream layers are
    // shared by both parameterizations, so a probe forward suffices).
    let mut probe = net.clone();
    probe.forward(Value::Mat(batch.clone()))?;
    let h_in = match &probe.layers[last] {
        Layer::Dense(l) => l.cached_input().expect("forward just ran").clone(),
        _ => unreachable!(),
    };
    let (mu_h, sigma2_h) = column_stats(&h_in)?;
    for (col, &v) in sigma2_h.iter().enumerate() {
        if v == 0.0 {
            return Err(Error::ZeroVarianceColumn { col });
        }
    }
    let sigma_h: Vec<f64> = sigma2_h.iter().map(|&v| v.sqrt()).collect();

    let (w_bn, b_bn, act) = match &net.layers[last] {
        Layer::Dense(l) => (l.weights.clone(), l.bias.clone(), l.activation),
        _ => unreachable!(),
    };
    let n_in = w_bn.cols();

    // The vanilla parameterization the batch-norm network is equivalent to:
    // W_hat = W diag(1/sigma), b_hat = b - W_hat mu.
    let to_vanilla = |w: &Matrix, b: &[f64]| {
        let w_hat = Matrix::from_fn(w.rows(), n_in, |i, j| w.get(i, j) / sigma_h[j]);
        let b_hat: Vec<f64> = (0..w.rows())
            .map(|i| {
                b[i]
                    - (0..n_in)
                        .map(|j| w_hat.get(i, j) * mu_h[j])
                        .sum::<f64>()
            })
            .collect();
        (w_hat, b_hat)
    };
    let (w_hat, b_hat) = to_vanilla(&w_bn, &b_bn);

    // Path (a): one SGD step on the batch-norm network in (W, b), then map
    // the stepped parameters to vanilla form with the pre-step statistics.
    let mut bn_layer = BatchNormLayer::new(n_in, 0.99, 0.0);
    bn_layer.affine = false;
    bn_layer.stop_grad_stats = true;
    let mut bn_layers: Vec<Layer> = net.layers[..last].to_vec();
    bn_layers.push(Layer::BatchNorm(bn_layer));
    bn_layers.push(Layer::Dense(DenseLayer::new(w_bn, b_bn, act)?));
    let mut bn_net = Network::new(bn_layers);

    let logits = bn_net.forward(Value::Mat(batch.clone()))?;
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let grads = bn_net.backward(&dlogits)?;
    SgdOptimizer::new(lr, 0.0).step(&mut bn_net, &grads)?;

    let (w_next_a, b_next_a) = match &bn_net.layers[last + 1] {
        Layer::Dense(l) => to_vanilla(&l.weights, &l.bias),
        _ => unreachable!(),
    };

    // Path (b): one preconditioned step on the vanilla network initialized
    // at (W_hat, b_hat). Only the layer behind the normalization is
    // preconditioned; the upstream layers take their raw gradients (they
    // saw no batch-norm layer in path (a) either).
    let mut van_layers: Vec<Layer> = net.layers[..last].to_vec();
    van_layers.push(Layer::Dense(DenseLayer::new(w_hat, b_hat, act)?));
    let mut van_net = Network::new(van_layers);
    let logits = van_net.forward(Value::Mat(batch.clone()))?;
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let mut grads = van_net.backward(&dlogits)?;
    if let LayerGrad::Dense { weights, bias } = &grads.layers[last] {
        let mut state = BnpState::new(
            LayerShape::Dense {
                n_in,
                n_out: weights.rows(),
            },
            0.99,
            0.0,
            0.0,
        );
        state.use_running_stats = false;
        state.update_stats_dense(&h_in)?;
        let (gw, gb) = state.precondition_dense_with_q2(weights, bias, 1.0)?;
        grads.layers[last] = LayerGrad::Dense {
            weights: gw,
            bias: gb,
        };
    }
    SgdOptimizer::new(lr, 0.0).step(&mut van_net, &grads)?;

    // Compare: upstream layers directly, the final layer in vanilla form.
    let mut worst = 0.0f64;
    let mut compare = |a: &[f64], b: &[f64]| {
        for (x, y) in a.iter().zip(b) {
            let denom = x.abs().max(y.abs()).max(1.0);
            worst = worst.max((x - y).abs() / denom);
        }
    };
    for idx in 0..last {
        match (&bn_net.layers[idx], &van_net.layers[idx]) {
            (Layer::Dense(a), Layer::Dense(b)) => {
                compare(a.weights.data(), b.weights.data());
                compare(&a.bias, &b.bias);
            }
            _ => unreachable!(),
        }
    }
    match &van_net.layers[last] {
        Layer::Dense(b) => {
            compare(w_next_a.data(), b.weights.data());
            compare(&b_next_a, &b.bias);
        }
        _ => unreachable!(),
    }
    Ok(worst)
}
