//! Finite-difference oracles. These deliberately avoid the analytic
//! gradient/Hessian code paths they are used to check: every evaluation is
//! a fresh forward pass on a perturbed parameter set.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::network::{GradientBundle, Layer, LayerGrad, Network, Value};

/// Mean batch loss of a network clone with one flat-indexed parameter of one
/// layer shifted by `bump`.
fn loss_with_bump(
    net: &Network,
    input: &Value,
    labels: &[usize],
    layer_idx: usize,
    flat_idx: usize,
    bump: f64,
) -> Result<f64> {
    let mut probe = net.clone();
    bump_parameter(&mut probe.layers[layer_idx], flat_idx, bump)?;
    let logits = probe.forward(input.clone())?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// Applies `value` to the flat parameter `idx` of a layer. The flat order is
/// weights-then-bias (gamma-then-beta for batch norm), matching
/// [`parameter_count`].
fn bump_parameter(layer: &mut Layer, idx: usize, value: f64) -> Result<()> {
    match layer {
        Layer::Dense(l) => {
            let nw = l.weights.data().len();
            if idx < nw {
                l.weights.data_mut()[idx] += value;
            } else {
                l.bias[idx - nw] += value;
            }
        }
        Layer::Conv2d(l) => {
            let nw = l.kernel.data().len();
            if idx < nw {
                l.kernel.data_mut()[idx] += value;
            } else {
                l.bias[idx - nw] += value;
            }
        }
        Layer::BatchNorm(l) | Layer::BatchNorm2d(l, _) => {
            let ng = l.gamma.len();
            if idx < ng {
                l.gamma[idx] += value;
            } else {
                l.beta[idx - ng] += value;
            }
        }
        Layer::Flatten(_) => {
            return Err(Error::ShapeMismatch {
                context: "bump_parameter",
                expected: "parameterized layer".to_string(),
                actual: "flatten layer".to_string(),
            })
        }
    }
    Ok(())
}

pub fn parameter_count(layer: &Layer) -> usize {
    match layer {
        Layer::Dense(l) => l.weights.data().len() + l.bias.len(),
        Layer::Conv2d(l) => l.kernel.data().len() + l.bias.len(),
        Layer::BatchNorm(l) | Layer::BatchNorm2d(l, _) => {
            if l.affine {
                l.gamma.len() + l.beta.len()
            } else {
                0
            }
        }
        Layer::Flatten(_) => 0,
    }
}

/// Central-difference gradient of the mean batch loss for every parameter
/// of every layer, in the same layout as [`Network::backward`].
pub fn fd_gradients(
    net: &Network,
    input: &Value,
    labels: &[usize],
    delta: f64,
) -> Result<GradientBundle> {
    let mut layers = Vec::with_capacity(net.layers.len());
    for (li, layer) in net.layers.iter().enumerate() {
        let count = parameter_count(layer);
        let mut flat = Vec::with_capacity(count);
        for idx in 0..count {
            let plus = loss_with_bump(net, input, labels, li, idx, delta)?;
            let minus = loss_with_bump(net, input, labels, li, idx, -delta)?;
            flat.push((plus - minus) / (2.0 * delta));
        }
        layers.push(unflatten_grad(layer, flat));
    }
    Ok(GradientBundle { layers })
}

fn unflatten_grad(layer: &Layer, flat: Vec<f64>) -> LayerGrad {
    match layer {
        Layer::Dense(l) => {
            let nw = l.weights.data().len();
            LayerGrad::Dense {
                weights: Matrix::new(l.weights.rows(), l.weights.cols(), flat[..nw].to_vec())
                    .expect("flat gradient shape"),
                bias: flat[nw..].to_vec(),
            }
        }
        Layer::Conv2d(l) => {
            let nw = l.kernel.data().len();
            let mut kernel =
                crate::nn::tensor::KernelTensor::zeros(l.kernel.k(), l.kernel.c_in(), l.kernel.c_out());
            kernel.data_mut().copy_from_slice(&flat[..nw]);
            LayerGrad::Conv2d {
                kernel,
                bias: flat[nw..].to_vec(),
            }
        }
        Layer::BatchNorm(l) | Layer::BatchNorm2d(l, _) => {
            if l.affine {
                let ng = l.gamma.len();
                LayerGrad::BatchNorm {
                    gamma: flat[..ng].to_vec(),
                    beta: flat[ng..].to_vec(),
                }
            } else {
                LayerGrad::None
            }
        }
        Layer::Flatten(_) => LayerGrad::None,
    }
}

/// Central-difference Hessian of the mean batch loss with respect to the
/// stacked `[bias_i; weight_row_i]` parameters of one neuron of one dense
/// layer. Entry (a, b) uses the four-point stencil
/// `(f(+a+b) - f(+a-b) - f(-a+b) + f(-a-b)) / (4 delta^2)`.
pub fn fd_neuron_hessian(
    net: &Network,
    input: &Value,
    labels: &[usize],
    layer_idx: usize,
    neuron: usize,
    delta: f64,
) -> Result<Matrix> {
    let (n_in, n_out) = match &net.layers[layer_idx] {
        Layer::Dense(l) => (l.n_in(), l.n_out()),
        _ => {
            return Err(Error::ShapeMismatch {
                context: "fd_neuron_hessian",
                expected: "dense layer".to_string(),
                actual: "other layer kind".to_string(),
            })
        }
    };
    if neuron >= n_out {
        return Err(Error::ShapeMismatch {
            context: "fd_neuron_hessian",
            expected: format!("neuron < {n_out}"),
            actual: format!("neuron {neuron}"),
        });
    }
    // Flat indices of [bias; weight row] within the layer's weights-then-bias
    // layout.
    let nw = n_in * n_out;
    let flat_of = |stacked: usize| -> usize {
        if stacked == 0 {
            nw + neuron
        } else {
            neuron * n_in + (stacked - 1)
        }
    };
    let w = n_in + 1;
    let mut hess = Matrix::zeros(w, w);
    for a in 0..w {
        for b in a..w {
            let (ia, ib) = (flat_of(a), flat_of(b));
            let pp = loss_with_two_bumps(net, input, labels, layer_idx, ia, delta, ib, delta)?;
            let pm = loss_with_two_bumps(net, input, labels, layer_idx, ia, delta, ib, -delta)?;
            let mp = loss_with_two_bumps(net, input, labels, layer_idx, ia, -delta, ib, delta)?;
            let mm = loss_with_two_bumps(net, input, labels, layer_idx, ia, -delta, ib, -delta)?;
            let v = (pp - pm - mp + mm) / (4.0 * delta * delta);
            hess.set(a, b, v);
            hess.set(b, a, v);
        }
    }
    Ok(hess)
}

fn loss_with_two_bumps(
    net: &Network,
    input: &Value,
    labels: &[usize],
    layer_idx: usize,
    idx_a: usize,
    bump_a: f64,
    idx_b: usize,
    bump_b: f64,
) -> Result<f64> {
    let mut probe = net.clone();
    bump_parameter(&mut probe.layers[layer_idx], idx_a, bump_a)?;
    bump_parameter(&mut probe.layers[layer_idx], idx_b, bump_b)?;
    let logits = probe.forward(input.clone())?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// Largest relative error between two gradient bundles, with the comparison
/// floored at 1 to keep near-zero entries from dominating.
pub fn max_relative_gradient_error(a: &GradientBundle, b: &GradientBundle) -> f64 {
    fn compare(worst: &mut f64, x: &[f64], y: &[f64]) {
        for (u, v) in x.iter().zip(y) {
            let denom = u.abs().max(v.abs()).max(1.0);
            *worst = worst.max((u - v).abs() / denom);
        }
    }
    let mut worst = 0.0f64;
    for (ga, gb) in a.layers.iter().zip(&b.layers) {
        match (ga, gb) {
            (
                LayerGrad::Dense {
                    weights: wa,
                    bias: ba,
                },
                LayerGrad::Dense {
                    weights: wb,
                    bias: bb,
                },
            ) => {
                compare(&mut worst, wa.data(), wb.data());
                compare(&mut worst, ba, bb);
            }
            (
                LayerGrad::Conv2d {
                    kernel: ka,
                    bias: ba,
                },
                LayerGrad::Conv2d {
                    kernel: kb,
                    bias: bb,
                },
            ) => {
                compare(&mut worst, ka.data(), kb.data());
                compare(&mut worst, ba, bb);
            }
            (
                LayerGrad::BatchNorm {
                    gamma: ga,
                    beta: ba,
                },
                LayerGrad::BatchNorm {
                    gamma: gb,
                    beta: bb,
                },
            ) => {
                compare(&mut worst, ga, gb);
                compare(&mut worst, ba, bb);
            }
            (LayerGrad::None, LayerGrad::None) => {}
            _ => {
                worst = f64::INFINITY;
            }
        }
    }
    worst
}
