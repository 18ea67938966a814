//! Network builders for the three supported architectures.
//!
//! Batch normalization, when requested, is applied post-activation: it
//! normalizes each hidden layer's output before the next affine layer.
//! The cnn-5layer stack is three same-convolutions (32-64-32 channels,
//! 3x3 kernels, stride 1) followed by a 64-unit dense layer and the
//! classifier.

use crate::config::{ArchKind, MethodKind, RunConfig};
use bnp_core::bnp::{BnpState, LayerShape};
use bnp_core::error::Result;
use bnp_core::linalg::Rng;
use bnp_core::nn::{init, Activation, BatchNormLayer, Layer, Network};

/// Per-example input shape.
#[derive(Debug, Clone, Copy)]
pub enum InputShape {
    Flat(usize),
    Image { r: usize, s: usize, c: usize },
}

impl InputShape {
    pub fn features(&self) -> usize {
        match *self {
            InputShape::Flat(n) => n,
            InputShape::Image { r, s, c } => r * s * c,
        }
    }
}

pub fn build_network(
    cfg: &RunConfig,
    input: InputShape,
    num_classes: usize,
    rng: &mut Rng,
) -> Result<Network> {
    let with_bn = cfg.method == MethodKind::Bn;
    let mut layers = Vec::new();
    match cfg.arch {
        ArchKind::Mlp3x100 | ArchKind::Mlp2Layer => {
            let hidden_count = if cfg.arch == ArchKind::Mlp3x100 { 3 } else { 2 };
            let mut n_in = input.features();
            for _ in 0..hidden_count {
                layers.push(Layer::Dense(init::glorot_dense(
                    n_in,
                    100,
                    Activation::Relu,
                    rng,
                )));
                if with_bn {
                    layers.push(Layer::BatchNorm(BatchNormLayer::new(100, cfg.rho, cfg.bn_eps)));
                }
                n_in = 100;
            }
            layers.push(Layer::Dense(init::glorot_dense(
                n_in,
                num_classes,
                Activation::None,
                rng,
            )));
        }
        ArchKind::Cnn5Layer => {
            let (r, s, c) = match input {
                InputShape::Image { r, s, c } => (r, s, c),
                InputShape::Flat(_) => {
                    return Err(bnp_core::Error::Config(
                        "cnn-5layer needs image-shaped input".to_string(),
                    ))
                }
            };
            let channel_plan = [(c, 32usize), (32, 64), (64, 32)];
            for (c_in, c_out) in channel_plan {
                layers.push(Layer::Conv2d(init::glorot_conv(
                    3,
                    c_in,
                    c_out,
                    Activation::Relu,
                    rng,
                )));
                if with_bn {
                    layers.push(Layer::BatchNorm2d(
                        BatchNormLayer::new(c_out, cfg.rho, cfg.bn_eps),
                        None,
                    ));
                }
            }
            layers.push(Layer::Flatten(None));
            let flat = r * s * 32;
            layers.push(Layer::Dense(init::glorot_dense(
                flat,
                64,
                Activation::Relu,
                rng,
            )));
            if with_bn {
                layers.push(Layer::BatchNorm(BatchNormLayer::new(64, cfg.rho, cfg.bn_eps)));
            }
            layers.push(Layer::Dense(init::glorot_dense(
                64,
                num_classes,
                Activation::None,
                rng,
            )));
        }
    }
    Ok(Network::new(layers))
}

/// One preconditioner state per parameterized dense/conv layer, in layer
/// order. Spatial dimensions for conv layers come from the input shape
/// (stride-1 same convolutions preserve them).
pub fn build_bnp_states(cfg: &RunConfig, net: &Network, input: InputShape) -> Vec<BnpState> {
    let (r, s) = match input {
        InputShape::Image { r, s, .. } => (r, s),
        InputShape::Flat(_) => (0, 0),
    };
    let mut states: Vec<BnpState> = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::Dense(l) => states.push(BnpState::new(
                LayerShape::Dense {
                    n_in: l.n_in(),
                    n_out: l.n_out(),
                },
                cfg.rho,
                cfg.eps1,
                cfg.eps2,
            )),
            Layer::Conv2d(l) => states.push(BnpState::new(
                LayerShape::Conv {
                    k: l.kernel.k(),
                    c_in: l.kernel.c_in(),
                    c_out: l.kernel.c_out(),
                    r,
                    s,
                },
                cfg.rho,
                cfg.eps1,
                cfg.eps2,
            )),
            Layer::BatchNorm(_) | Layer::BatchNorm2d(..) | Layer::Flatten(_) => {}
        }
    }
    for st in &mut states {
        st.use_running_stats = cfg.use_running_stats;
    }
    states
}
