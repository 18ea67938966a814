//! Fully connected layer: rows of the output are `g(W h + b)^T` per example.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::activation::Activation;

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `n_out x n_in`; row i is the weight vector of output neuron i.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    cache: Option<DenseCache>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    pass: u64,
    input: Matrix,
    preact: Matrix,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer::new",
                expected: format!("bias of length {}", weights.rows()),
                actual: format!("bias of length {}", bias.len()),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    /// Caches the input batch for backprop and preconditioning.
    pub fn forward(&mut self, input: &Matrix, pass: u64) -> Result<Matrix> {
        if input.cols() != self.n_in() {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer::forward",
                expected: format!("{} input features", self.n_in()),
                actual: format!("{} input features", input.cols()),
            });
        }
        let mut preact = input.matmul(&self.weights.transpose())?;
        for r in 0..preact.rows() {
            let row = preact.row_mut(r);
            for (c, x) in row.iter_mut().enumerate() {
                *x += self.bias[c];
            }
        }
        let mut out = preact.clone();
        for x in out.data_mut() {
            *x = self.activation.apply(*x);
        }
        self.cache = Some(DenseCache {
            pass,
            input: input.clone(),
            preact,
        });
        Ok(out)
    }

    /// Returns `(grad_input, grad_weights, grad_bias)`.
    pub fn backward(&self, grad_out: &Matrix, pass: u64) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let cache = self.cache.as_ref().ok_or(Error::StaleCache)?;
        if cache.pass != pass || grad_out.rows() != cache.input.rows() {
            return Err(Error::StaleCache);
        }
        // delta = grad_out ⊙ g'(preact), shape N x n_out.
        let mut delta = grad_out.clone();
        for (d, &p) in delta.data_mut().iter_mut().zip(cache.preact.data()) {
            *d *= self.activation.derivative(p);
        }
        let grad_w = delta.transpose().matmul(&cache.input)?;
        let mut grad_b = vec![0.0; self.n_out()];
        for r in 0..delta.rows() {
            for (c, g) in grad_b.iter_mut().enumerate() {
                *g += delta.get(r, c);
            }
        }
        let grad_in = delta.matmul(&self.weights)?;
        Ok((grad_in, grad_w, grad_b))
    }

    /// Input batch cached by the latest forward pass.
    pub fn cached_input(&self) -> Option<&Matrix> {
        self.cache.as_ref().map(|c| &c.input)
    }

    pub fn cached_preactivation(&self) -> Option<&Matrix> {
        self.cache.as_ref().map(|c| &c.preact)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
