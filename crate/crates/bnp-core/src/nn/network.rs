//! Layer stack with forward/backward over mini-batches.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::batchnorm::{BatchNormLayer, Mode};
use crate::nn::conv::Conv2dLayer;
use crate::nn::dense::DenseLayer;
use crate::nn::tensor::{KernelTensor, Tensor4};

/// A batch flowing through the stack: either flat feature rows or image
/// tensors. `Flatten` converts the latter into the former.
#[derive(Debug, Clone)]
pub enum Value {
    Mat(Matrix),
    Img(Tensor4),
}

impl Value {
    pub fn batch(&self) -> usize {
        match self {
            Value::Mat(m) => m.rows(),
            Value::Img(t) => t.batch(),
        }
    }

    pub fn expect_mat(self, context: &'static str) -> Result<Matrix> {
        match self {
            Value::Mat(m) => Ok(m),
            Value::Img(t) => Err(Error::ShapeMismatch {
                context,
                expected: "flat feature matrix".to_string(),
                actual: format!("image tensor {:?}", t.shape()),
            }),
        }
    }

    pub fn expect_img(self, context: &'static str) -> Result<Tensor4> {
        match self {
            Value::Img(t) => Ok(t),
            Value::Mat(m) => Err(Error::ShapeMismatch {
                context,
                expected: "image tensor".to_string(),
                actual: format!("{}x{} matrix", m.rows(), m.cols()),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Conv2d(Conv2dLayer),
    /// Batch norm over flat features.
    BatchNorm(BatchNormLayer),
    /// Batch norm over image tensors: per-channel statistics over the batch
    /// and both spatial dimensions. Spatial shape recorded at forward time.
    BatchNorm2d(BatchNormLayer, Option<(usize, usize)>),
    /// Image tensor -> flat feature rows.
    Flatten(Option<(usize, usize, usize)>),
}

/// Per-layer parameter gradients, shape-congruent with the parameters.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    Dense { weights: Matrix, bias: Vec<f64> },
    Conv2d { kernel: KernelTensor, bias: Vec<f64> },
    BatchNorm { gamma: Vec<f64>, beta: Vec<f64> },
    None,
}

#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub mode: Mode,
    pass: u64,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            mode: Mode::Train,
            pass: 0,
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Runs the batch through the stack and returns the logits.
    pub fn forward(&mut self, input: Value) -> Result<Matrix> {
        self.pass += 1;
        let pass = self.pass;
        let n_examples = input.batch();
        let mode = self.mode;
        let mut value = input;
        for layer in &mut self.layers {
            value = match layer {
                Layer::Dense(l) => {
                    let m = value.expect_mat("Dense layer input")?;
                    Value::Mat(l.forward(&m, pass)?)
                }
                Layer::Conv2d(l) => {
                    let t = value.expect_img("Conv2d layer input")?;
                    Value::Img(l.forward(&t, pass)?)
                }
                Layer::BatchNorm(l) => {
                    let m = value.expect_mat("BatchNorm layer input")?;
                    Value::Mat(l.forward(&m, n_examples, mode, pass)?)
                }
                Layer::BatchNorm2d(l, spatial) => {
                    let t = value.expect_img("BatchNorm2d layer input")?;
                    let (n, r, s, _) = t.shape();
                    *spatial = Some((r, s));
                    let m = l.forward(&t.to_channel_matrix(), n_examples, mode, pass)?;
                    Value::Img(Tensor4::from_channel_matrix(&m, n, r, s)?)
                }
                Layer::Flatten(shape) => {
                    let t = value.expect_img("Flatten layer input")?;
                    let (_, r, s, c) = t.shape();
                    *shape = Some((r, s, c));
                    Value::Mat(t.flatten())
                }
            };
        }
        value.expect_mat("network output")
    }

    /// Backpropagates a logits gradient through the stack. Must follow a
    /// forward pass on the same batch; otherwise the caches are stale.
    pub fn backward(&mut self, grad_logits: &Matrix) -> Result<GradientBundle> {
        let pass = self.pass;
        if pass == 0 {
            return Err(Error::StaleCache);
        }
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        let mut value = Value::Mat(grad_logits.clone());
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            value = match layer {
                Layer::Dense(l) => {
                    let g = value.expect_mat("Dense layer gradient")?;
                    let (grad_in, gw, gb) = l.backward(&g, pass)?;
                    grads[idx] = LayerGrad::Dense {
                        weights: gw,
                        bias: gb,
                    };
                    Value::Mat(grad_in)
                }
                Layer::Conv2d(l) => {
                    let g = value.expect_img("Conv2d layer gradient")?;
                    let (grad_in, gk, gb) = l.backward(&g, pass)?;
                    grads[idx] = LayerGrad::Conv2d {
                        kernel: gk,
                        bias: gb,
                    };
                    Value::Img(grad_in)
                }
                Layer::BatchNorm(l) => {
                    let g = value.expect_mat("BatchNorm layer gradient")?;
                    let (grad_in, dgamma, dbeta) = l.backward(&g, pass)?;
                    grads[idx] = if l.affine {
                        LayerGrad::BatchNorm {
                            gamma: dgamma,
                            beta: dbeta,
                        }
                    } else {
                        LayerGrad::None
                    };
                    Value::Mat(grad_in)
                }
                Layer::BatchNorm2d(l, spatial) => {
                    let t = value.expect_img("BatchNorm2d layer gradient")?;
                    let (n, r, s, _) = t.shape();
                    if *spatial != Some((r, s)) {
                        return Err(Error::StaleCache);
                    }
                    let (grad_in, dgamma, dbeta) = l.backward(&t.to_channel_matrix(), pass)?;
                    grads[idx] = if l.affine {
                        LayerGrad::BatchNorm {
                            gamma: dgamma,
                            beta: dbeta,
                        }
                    } else {
                        LayerGrad::None
                    };
                    Value::Img(Tensor4::from_channel_matrix(&grad_in, n, r, s)?)
                }
                Layer::Flatten(shape) => {
                    let g = value.expect_mat("Flatten layer gradient")?;
                    let (r, s, c) = shape.ok_or(Error::StaleCache)?;
                    Value::Img(Tensor4::from_flat(&g, r, s, c)?)
                }
            };
        }
        Ok(GradientBundle { layers: grads })
    }

    /// Number of layers carrying trainable parameters.
    pub fn parameterized_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| {
                matches!(
                    l,
                    Layer::Dense(_) | Layer::Conv2d(_) | Layer::BatchNorm(_) | Layer::BatchNorm2d(..)
                )
            })
            .count()
    }

    /// Flat copy of every trainable parameter, for comparisons in tests.
    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(l) => {
                    out.extend_from_slice(l.weights.data());
                    out.extend_from_slice(&l.bias);
                }
                Layer::Conv2d(l) => {
                    out.extend_from_slice(l.kernel.data());
                    out.extend_from_slice(&l.bias);
                }
                Layer::BatchNorm(l) | Layer::BatchNorm2d(l, _) => {
                    if l.affine {
                        out.extend_from_slice(&l.gamma);
                        out.extend_from_slice(&l.beta);
                    }
                }
                Layer::Flatten(_) => {}
            }
        }
        out
    }
}
