//! Neural-network training with batch normalization preconditioning (BNP),
//! plus an analysis suite that builds per-neuron Hessians and numerically
//! verifies the conditioning properties the preconditioner relies on.
//!
//! Modules:
//! - [`linalg`]: dense matrices, SVD, condition numbers, seeded RNG
//! - [`nn`]: forward/backward for dense, convolution, and batch-norm
//!   layers, softmax cross-entropy, SGD with momentum, checkpoints
//! - [`bnp`]: the gradient preconditioning transform for dense and
//!   convolution layers, with running statistics and q normalization
//! - [`hessian`]: exact per-neuron Hessians, preconditioners, lowered
//!   convolution matrices, and the executable conditioning checks
//! - [`data`]: MNIST IDX and CIFAR-10 binary loaders, synthetic
//!   ill-conditioned data, deterministic batch iteration

pub mod bnp;
pub mod data;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod nn;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
