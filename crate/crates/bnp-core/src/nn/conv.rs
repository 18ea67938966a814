//! Same-convolution layer with zero padding and stride 1.
//!
//! For kernel row `v`, column `j`, input channel `p`, output channel `d`
//! (all 0-based, offset `o = (k-1)/2`):
//!
//! `a(y, x, d) = b(d) + sum_{v,j,p} h(y+v-o, x+j-o, p) * w(v, j, p, d)`
//!
//! with `h` read as zero outside its bounds. Output spatial dimensions equal
//! the input's.

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::tensor::{KernelTensor, Tensor4};

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub kernel: KernelTensor,
    pub bias: Vec<f64>,
    pub activation: Activation,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    pass: u64,
    input: Tensor4,
    preact: Tensor4,
}

impl Conv2dLayer {
    pub fn new(kernel: KernelTensor, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if kernel.k() % 2 == 0 {
            return Err(Error::EvenKernel { k: kernel.k() });
        }
        if kernel.c_out() != bias.len() {
            return Err(Error::ShapeMismatch {
                context: "Conv2dLayer::new",
                expected: format!("bias of length {}", kernel.c_out()),
                actual: format!("bias of length {}", bias.len()),
            });
        }
        Ok(Self {
            kernel,
            bias,
            activation,
            cache: None,
        })
    }

    pub fn forward(&mut self, input: &Tensor4, pass: u64) -> Result<Tensor4> {
        let (n, r, s, c_in) = input.shape();
        if c_in != self.kernel.c_in() {
            return Err(Error::ShapeMismatch {
                context: "Conv2dLayer::forward",
                expected: format!("{} input channels", self.kernel.c_in()),
                actual: format!("{c_in} input channels"),
            });
        }
        let preact = conv2d_same(input, &self.kernel, &self.bias);
        let mut out = preact.clone();
        for x in out.data_mut() {
            *x = self.activation.apply(*x);
        }
        debug_assert_eq!(out.shape(), (n, r, s, self.kernel.c_out()));
        self.cache = Some(ConvCache {
            pass,
            input: input.clone(),
            preact,
        });
        Ok(out)
    }

    /// Returns `(grad_input, grad_kernel, grad_bias)`.
    pub fn backward(
        &self,
        grad_out: &Tensor4,
        pass: u64,
    ) -> Result<(Tensor4, KernelTensor, Vec<f64>)> {
        let cache = self.cache.as_ref().ok_or(Error::StaleCache)?;
        if cache.pass != pass || grad_out.batch() != cache.input.batch() {
            return Err(Error::StaleCache);
        }
        let (n, r, s, c_in) = cache.input.shape();
        let k = self.kernel.k();
        let c_out = self.kernel.c_out();
        let o = (k / 2) as isize;

        // delta = grad_out ⊙ g'(preact).
        let mut delta = grad_out.clone();
        for (d, &p) in delta.data_mut().iter_mut().zip(cache.preact.data()) {
            *d *= self.activation.derivative(p);
        }

        let mut grad_kernel = KernelTensor::zeros(k, c_in, c_out);
        let mut grad_bias = vec![0.0; c_out];
        let mut grad_in = Tensor4::zeros(n, r, s, c_in);

        for i in 0..n {
            for y in 0..r {
                for x in 0..s {
                    for d in 0..c_out {
                        let dl = delta.get(i, y, x, d);
                        if dl == 0.0 {
                            continue;
                        }
                        grad_bias[d] += dl;
                        for v in 0..k {
                            let yy = y as isize + v as isize - o;
                            if yy < 0 || yy >= r as isize {
                                continue;
                            }
                            for j in 0..k {
                                let xx = x as isize + j as isize - o;
                                if xx < 0 || xx >= s as isize {
                                    continue;
                                }
                                for p in 0..c_in {
                                    let h = cache.input.get(i, yy as usize, xx as usize, p);
                                    let w = self.kernel.get(v, j, p, d);
                                    grad_kernel.set(
                                        v,
                                        j,
                                        p,
                                        d,
                                        grad_kernel.get(v, j, p, d) + dl * h,
                                    );
                                    grad_in.add_assign(i, yy as usize, xx as usize, p, dl * w);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((grad_in, grad_kernel, grad_bias))
    }

    pub fn cached_input(&self) -> Option<&Tensor4> {
        self.cache.as_ref().map(|c| &c.input)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Plain same-convolution of a batch, no activation.
pub fn conv2d_same(input: &Tensor4, kernel: &KernelTensor, bias: &[f64]) -> Tensor4 {
    let (n, r, s, c_in) = input.shape();
    let k = kernel.k();
    let c_out = kernel.c_out();
    let o = (k / 2) as isize;
    let mut out = Tensor4::zeros(n, r, s, c_out);
    for i in 0..n {
        for y in 0..r {
            for x in 0..s {
                for d in 0..c_out {
                    let mut acc = bias[d];
                    for v in 0..k {
                        let yy = y as isize + v as isize - o;
                        for j in 0..k {
                            let xx = x as isize + j as isize - o;
                            for p in 0..c_in {
                                acc += input.get_padded(i, yy, xx, p) * kernel.get(v, j, p, d);
                            }
                        }
                    }
                    out.set(i, y, x, d, acc);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    #[test]
    fn one_by_one_unit_kernel_is_identity() {
        let kernel = KernelTensor::from_fn(1, 1, 1, |_, _, _, _| 1.0);
        let mut layer = Conv2dLayer::new(kernel, vec![0.0], Activation::None).unwrap();
        let mut rng = Rng::new(2);
        let input = Tensor4::from_fn(2, 3, 4, 1, |_, _, _, _| rng.normal());
        let out = layer.forward(&input, 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let kernel = KernelTensor::zeros(3, 2, 2);
        let mut layer = Conv2dLayer::new(kernel, vec![0.25, -1.5], Activation::None).unwrap();
        let input = Tensor4::zeros(1, 4, 4, 2);
        let out = layer.forward(&input, 1).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get(0, y, x, 0), 0.25);
                assert_eq!(out.get(0, y, x, 1), -1.5);
            }
        }
    }

    #[test]
    fn even_kernel_is_rejected() {
        let kernel = KernelTensor::zeros(2, 1, 1);
        assert!(Conv2dLayer::new(kernel, vec![0.0], Activation::None).is_err());
    }

    #[test]
    fn same_shape_for_all_odd_kernel_sizes() {
        let (r, s) = (7, 5);
        for k in [1usize, 3, 5] {
            let kernel = KernelTensor::from_fn(k, 2, 3, |_, _, _, _| 0.1);
            let mut layer = Conv2dLayer::new(kernel, vec![0.0; 3], Activation::None).unwrap();
            let input = Tensor4::from_fn(2, r, s, 2, |i, y, x, p| (i + y + x + p) as f64);
            let out = layer.forward(&input, 1).unwrap();
            assert_eq!(out.shape(), (2, r, s, 3));
        }
    }

    #[test]
    fn hand_convolution_on_tiny_input() {
        // 2x2 single-channel input, 3x3 kernel picking the center only.
        let mut kernel = KernelTensor::zeros(3, 1, 1);
        kernel.set(1, 1, 0, 0, 2.0);
        let mut layer = Conv2dLayer::new(kernel, vec![1.0], Activation::None).unwrap();
        let input =
            Tensor4::from_data(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = layer.forward(&input, 1).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(out.get(0, y, x, 0), 2.0 * input.get(0, y, x, 0) + 1.0);
            }
        }
    }

    #[test]
    fn padding_contributes_zero() {
        // Kernel that reads only the upper-left neighbor; at (0, 0) that
        // neighbor is padding.
        let mut kernel = KernelTensor::zeros(3, 1, 1);
        kernel.set(0, 0, 0, 0, 1.0);
        let mut layer = Conv2dLayer::new(kernel, vec![0.0], Activation::None).unwrap();
        let input =
            Tensor4::from_data(1, 2, 2, 1, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = layer.forward(&input, 1).unwrap();
        assert_eq!(out.get(0, 0, 0, 0), 0.0);
        assert_eq!(out.get(0, 1, 1, 0), 5.0);
    }
}
