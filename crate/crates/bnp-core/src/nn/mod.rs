//! Forward/backward propagation for dense, convolution, and batch-norm
//! layers, softmax cross-entropy, SGD with momentum, and checkpoints.

pub mod activation;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod init;
pub mod loss;
pub mod network;
pub mod sgd;
pub mod tensor;

pub use activation::Activation;
pub use batchnorm::{BatchNormLayer, Mode};
pub use conv::{conv2d_same, Conv2dLayer};
pub use dense::DenseLayer;
pub use loss::{accuracy, softmax_cross_entropy, softmax_rows};
pub use network::{GradientBundle, Layer, LayerGrad, Network, Value};
pub use sgd::SgdOptimizer;
pub use tensor::{KernelTensor, Tensor4};
