//! Flat binary checkpoint with shape headers.
//!
//! Layout (all integers little-endian, all floats f64 little-endian bits):
//!
//! ```text
//! magic   8 bytes  "BNPCKPT1"
//! u32     layer count
//! layers  tag u8 then per-kind payload:
//!   0 Dense:       u32 n_out, u32 n_in, u8 activation,
//!                  f64[n_out*n_in] weights (row-major), f64[n_out] bias
//!   1 Conv2d:      u32 k, u32 c_in, u32 c_out, u8 activation,
//!                  f64[k*k*c_in*c_out] kernel (storage order), f64[c_out] bias
//!   2 BatchNorm:   u32 n_features, f64 rho, f64 eps, u8 stop_grad, u8 affine,
//!   3 BatchNorm2d: f64[n] gamma, f64[n] beta, f64[n] running_mean, f64[n] running_var
//!   4 Flatten:     (no payload)
//! u8      preconditioner-state flag (0/1); if 1:
//! u32     state count
//! states  u8 kind (0 dense / 1 conv), dims (dense: u32 n_in, u32 n_out;
//!         conv: u32 k, u32 c_in, u32 c_out, u32 r, u32 s),
//!         f64 rho, f64 eps1, f64 eps2, u8 use_running_stats,
//!         f64[stat_len] mu, f64[stat_len] sigma2
//! ```
//!
//! Activation codes: 0 = relu, 1 = none. Round-trips are bit-exact.

use crate::bnp::{BnpState, LayerShape};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::activation::Activation;
use crate::nn::batchnorm::BatchNormLayer;
use crate::nn::conv::Conv2dLayer;
use crate::nn::dense::DenseLayer;
use crate::nn::network::{Layer, Network};
use crate::nn::tensor::KernelTensor;
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"BNPCKPT1";

pub fn save<W: Write>(w: &mut W, net: &Network, bnp: Option<&[BnpState]>) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        match layer {
            Layer::Dense(l) => {
                w.write_all(&[0u8])?;
                write_u32(w, l.n_out() as u32)?;
                write_u32(w, l.n_in() as u32)?;
                w.write_all(&[activation_code(l.activation)])?;
                write_f64s(w, l.weights.data())?;
                write_f64s(w, &l.bias)?;
            }
            Layer::Conv2d(l) => {
                w.write_all(&[1u8])?;
                write_u32(w, l.kernel.k() as u32)?;
                write_u32(w, l.kernel.c_in() as u32)?;
                write_u32(w, l.kernel.c_out() as u32)?;
                w.write_all(&[activation_code(l.activation)])?;
                write_f64s(w, l.kernel.data())?;
                write_f64s(w, &l.bias)?;
            }
            Layer::BatchNorm(l) => {
                w.write_all(&[2u8])?;
                write_batchnorm(w, l)?;
            }
            Layer::BatchNorm2d(l, _) => {
                w.write_all(&[3u8])?;
                write_batchnorm(w, l)?;
            }
            Layer::Flatten(_) => {
                w.write_all(&[4u8])?;
            }
        }
    }
    match bnp {
        None => w.write_all(&[0u8])?,
        Some(states) => {
            w.write_all(&[1u8])?;
            write_u32(w, states.len() as u32)?;
            for st in states {
                match &st.shape {
                    LayerShape::Dense { n_in, n_out } => {
                        w.write_all(&[0u8])?;
                        write_u32(w, *n_in as u32)?;
                        write_u32(w, *n_out as u32)?;
                    }
                    LayerShape::Conv { k, c_in, c_out, r, s } => {
                        w.write_all(&[1u8])?;
                        write_u32(w, *k as u32)?;
                        write_u32(w, *c_in as u32)?;
                        write_u32(w, *c_out as u32)?;
                        write_u32(w, *r as u32)?;
                        write_u32(w, *s as u32)?;
                    }
                }
                write_f64s(w, &[st.rho, st.eps1, st.eps2])?;
                w.write_all(&[u8::from(st.use_running_stats)])?;
                write_f64s(w, &st.mu)?;
                write_f64s(w, &st.sigma2)?;
            }
        }
    }
    Ok(())
}

pub fn load<R: Read>(r: &mut R) -> Result<(Network, Option<Vec<BnpState>>)> {
    let mut reader = Counted { inner: r, pos: 0 };
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(|e| parse_err(&reader, &e.to_string()))?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            context: "checkpoint",
            message: format!("bad magic {magic:02x?}"),
            offset: 0,
        });
    }
    let n_layers = read_u32(&mut reader)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = read_u8(&mut reader)?;
        match tag {
            0 => {
                let n_out = read_u32(&mut reader)? as usize;
                let n_in = read_u32(&mut reader)? as usize;
                let act = activation_from_code(read_u8(&mut reader)?, &reader)?;
                let weights = Matrix::new(n_out, n_in, read_f64s(&mut reader, n_out * n_in)?)?;
                let bias = read_f64s(&mut reader, n_out)?;
                layers.push(Layer::Dense(DenseLayer::new(weights, bias, act)?));
            }
            1 => {
                let k = read_u32(&mut reader)? as usize;
                let c_in = read_u32(&mut reader)? as usize;
                let c_out = read_u32(&mut reader)? as usize;
                let act = activation_from_code(read_u8(&mut reader)?, &reader)?;
                let data = read_f64s(&mut reader, k * k * c_in * c_out)?;
                let mut kernel = KernelTensor::zeros(k, c_in, c_out);
                kernel.data_mut().copy_from_slice(&data);
                let bias = read_f64s(&mut reader, c_out)?;
                layers.push(Layer::Conv2d(Conv2dLayer::new(kernel, bias, act)?));
            }
            2 | 3 => {
                let l = read_batchnorm(&mut reader)?;
                if tag == 2 {
                    layers.push(Layer::BatchNorm(l));
                } else {
                    layers.push(Layer::BatchNorm2d(l, None));
                }
            }
            4 => layers.push(Layer::Flatten(None)),
            other => {
                return Err(Error::Parse {
                    context: "checkpoint",
                    message: format!("unknown layer tag {other}"),
                    offset: reader.pos - 1,
                })
            }
        }
    }
    let has_bnp = read_u8(&mut reader)? == 1;
    let states = if has_bnp {
        let count = read_u32(&mut reader)? as usize;
        let mut states = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = read_u8(&mut reader)?;
            let shape = match kind {
                0 => LayerShape::Dense {
                    n_in: read_u32(&mut reader)? as usize,
                    n_out: read_u32(&mut reader)? as usize,
                },
                1 => LayerShape::Conv {
                    k: read_u32(&mut reader)? as usize,
                    c_in: read_u32(&mut reader)? as usize,
                    c_out: read_u32(&mut reader)? as usize,
                    r: read_u32(&mut reader)? as usize,
                    s: read_u32(&mut reader)? as usize,
                },
                other => {
                    return Err(Error::Parse {
                        context: "checkpoint",
                        message: format!("unknown state kind {other}"),
                        offset: reader.pos - 1,
                    })
                }
            };
            let hyper = read_f64s(&mut reader, 3)?;
            let use_running = read_u8(&mut reader)? == 1;
            let len = shape.stat_len();
            let mu = read_f64s(&mut reader, len)?;
            let sigma2 = read_f64s(&mut reader, len)?;
            let mut st = BnpState::new(shape, hyper[0], hyper[1], hyper[2]);
            st.use_running_stats = use_running;
            st.mu = mu;
            st.sigma2 = sigma2;
            states.push(st);
        }
        Some(states)
    } else {
        None
    };
    Ok((Network::new(layers), states))
}

pub fn save_to_path(
    path: &std::path::Path,
    net: &Network,
    bnp: Option<&[BnpState]>,
) -> Result<()> {
    let mut buf = Vec::new();
    save(&mut buf, net, bnp)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_from_path(path: &std::path::Path) -> Result<(Network, Option<Vec<BnpState>>)> {
    let bytes = std::fs::read(path)?;
    load(&mut bytes.as_slice())
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::None => 1,
    }
}

fn activation_from_code<R: Read>(code: u8, reader: &Counted<R>) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::None),
        other => Err(Error::Parse {
            context: "checkpoint",
            message: format!("unknown activation code {other}"),
            offset: reader.pos - 1,
        }),
    }
}

fn write_batchnorm<W: Write>(w: &mut W, l: &BatchNormLayer) -> Result<()> {
    write_u32(w, l.n_features() as u32)?;
    write_f64s(w, &[l.rho, l.eps])?;
    w.write_all(&[u8::from(l.stop_grad_stats), u8::from(l.affine)])?;
    write_f64s(w, &l.gamma)?;
    write_f64s(w, &l.beta)?;
    write_f64s(w, &l.running_mean)?;
    write_f64s(w, &l.running_var)?;
    Ok(())
}

fn read_batchnorm<R: Read>(r: &mut Counted<R>) -> Result<BatchNormLayer> {
    let n = read_u32(r)? as usize;
    let hyper = read_f64s(r, 2)?;
    let stop_grad = read_u8(r)? == 1;
    let affine = read_u8(r)? == 1;
    let mut l = BatchNormLayer::new(n, hyper[0], hyper[1]);
    l.stop_grad_stats = stop_grad;
    l.affine = affine;
    l.gamma = read_f64s(r, n)?;
    l.beta = read_f64s(r, n)?;
    l.running_mean = read_f64s(r, n)?;
    l.running_var = read_f64s(r, n)?;
    Ok(l)
}

struct Counted<'a, R: Read> {
    inner: &'a mut R,
    pos: usize,
}

impl<R: Read> Read for Counted<'_, R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n;
        Ok(n)
    }
}

fn parse_err<R: Read>(reader: &Counted<R>, message: &str) -> Error {
    Error::Parse {
        context: "checkpoint",
        message: message.to_string(),
        offset: reader.pos,
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u8<R: Read>(r: &mut Counted<R>) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|e| parse_err(r, &e.to_string()))?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut Counted<R>) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| parse_err(r, &e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut Counted<R>, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b).map_err(|e| parse_err(r, &e.to_string()))?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}
