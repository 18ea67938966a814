//! SGD with classical momentum: `v <- momentum * v + g`, `theta <- theta - lr * v`.

use crate::error::{Error, Result};
use crate::nn::network::{GradientBundle, Layer, LayerGrad, Network};

#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Vec<LayerGrad>>,
}

impl SgdOptimizer {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &GradientBundle) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::ShapeMismatch {
                context: "SgdOptimizer::step",
                expected: format!("{} layer gradients", net.layers.len()),
                actual: format!("{} layer gradients", grads.layers.len()),
            });
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| vec![LayerGrad::None; grads.layers.len()]);

        for (idx, grad) in grads.layers.iter().enumerate() {
            let vel = &mut velocity[idx];
            match (grad, &mut net.layers[idx]) {
                (LayerGrad::None, _) => {}
                (LayerGrad::Dense { weights, bias }, Layer::Dense(layer)) => {
                    if matches!(vel, LayerGrad::None) {
                        *vel = LayerGrad::Dense {
                            weights: crate::linalg::Matrix::zeros(weights.rows(), weights.cols()),
                            bias: vec![0.0; bias.len()],
                        };
                    }
                    if let LayerGrad::Dense {
                        weights: vw,
                        bias: vb,
                    } = vel
                    {
                        for (v, &g) in vw.data_mut().iter_mut().zip(weights.data()) {
                            *v = self.momentum * *v + g;
                        }
                        for (v, &g) in vb.iter_mut().zip(bias) {
                            *v = self.momentum * *v + g;
                        }
                        for (w, &v) in layer.weights.data_mut().iter_mut().zip(vw.data()) {
                            *w -= self.lr * v;
                        }
                        for (b, &v) in layer.bias.iter_mut().zip(vb.iter()) {
                            *b -= self.lr * v;
                        }
                    }
                }
                (LayerGrad::Conv2d { kernel, bias }, Layer::Conv2d(layer)) => {
                    if matches!(vel, LayerGrad::None) {
                        *vel = LayerGrad::Conv2d {
                            kernel: crate::nn::tensor::KernelTensor::zeros(
                                kernel.k(),
                                kernel.c_in(),
                                kernel.c_out(),
                            ),
                            bias: vec![0.0; bias.len()],
                        };
                    }
                    if let LayerGrad::Conv2d {
                        kernel: vk,
                        bias: vb,
                    } = vel
                    {
                        for (v, &g) in vk.data_mut().iter_mut().zip(kernel.data()) {
                            *v = self.momentum * *v + g;
                        }
                        for (v, &g) in vb.iter_mut().zip(bias) {
                            *v = self.momentum * *v + g;
                        }
                        for (w, &v) in layer.kernel.data_mut().iter_mut().zip(vk.data()) {
                            *w -= self.lr * v;
                        }
                        for (b, &v) in layer.bias.iter_mut().zip(vb.iter()) {
                            *b -= self.lr * v;
                        }
                    }
                }
                (LayerGrad::BatchNorm { gamma, beta }, Layer::BatchNorm(layer))
                | (LayerGrad::BatchNorm { gamma, beta }, Layer::BatchNorm2d(layer, _)) => {
                    if matches!(vel, LayerGrad::None) {
                        *vel = LayerGrad::BatchNorm {
                            gamma: vec![0.0; gamma.len()],
                            beta: vec![0.0; beta.len()],
                        };
                    }
                    if let LayerGrad::BatchNorm {
                        gamma: vg,
                        beta: vb,
                    } = vel
                    {
                        for (v, &g) in vg.iter_mut().zip(gamma) {
                            *v = self.momentum * *v + g;
                        }
                        for (v, &g) in vb.iter_mut().zip(beta) {
                            *v = self.momentum * *v + g;
                        }
                        for (w, &v) in layer.gamma.iter_mut().zip(vg.iter()) {
                            *w -= self.lr * v;
                        }
                        for (b, &v) in layer.beta.iter_mut().zip(vb.iter()) {
                            *b -= self.lr * v;
                        }
                    }
                }
                _ => {
                    return Err(Error::ShapeMismatch {
                        context: "SgdOptimizer::step",
                        expected: "gradient matching layer kind".to_string(),
                        actual: format!("gradient for layer {idx} of different kind"),
                    })
                }
            }
        }
        Ok(())
    }
}
