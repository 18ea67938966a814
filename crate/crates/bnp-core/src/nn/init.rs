//! Glorot-uniform initialization with zero biases.

use crate::linalg::{Matrix, Rng};
use crate::nn::activation::Activation;
use crate::nn::conv::Conv2dLayer;
use crate::nn::dense::DenseLayer;
use crate::nn::tensor::KernelTensor;

/// Uniform in `[-limit, limit]` with `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn glorot_dense(
    n_in: usize,
    n_out: usize,
    activation: Activation,
    rng: &mut Rng,
) -> DenseLayer {
    let limit = glorot_limit(n_in, n_out);
    let weights = Matrix::from_fn(n_out, n_in, |_, _| rng.uniform(-limit, limit));
    DenseLayer::new(weights, vec![0.0; n_out], activation).expect("consistent shapes")
}

pub fn glorot_conv(
    k: usize,
    c_in: usize,
    c_out: usize,
    activation: Activation,
    rng: &mut Rng,
) -> Conv2dLayer {
    let limit = glorot_limit(k * k * c_in, k * k * c_out);
    let mut kernel = KernelTensor::zeros(k, c_in, c_out);
    // Fill in storage order so the draw sequence is well defined.
    for x in kernel.data_mut() {
        *x = rng.uniform(-limit, limit);
    }
    Conv2dLayer::new(kernel, vec![0.0; c_out], activation).expect("odd kernel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_respect_limit_and_biases_are_zero() {
        let mut rng = Rng::new(42);
        let layer = glorot_dense(30, 20, Activation::Relu, &mut rng);
        let limit = glorot_limit(30, 20);
        assert!(layer.weights.data().iter().all(|&w| w.abs() <= limit));
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}
