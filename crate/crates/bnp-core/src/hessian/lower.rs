//! Lowered convolution matrices and the two kinds of convolution
//! statistics.
//!
//! For a batch of feature tensors, `cnn_lower` builds the matrix whose
//! product with the stacked kernel-plus-bias vector reproduces the
//! vectorized convolution output. For one example, row `(x)*r + y` (output
//! position, first spatial index fastest) and column `p*k^2 + j*k + v`
//! (kernel entry, first index fastest) holds the zero-padded input entry
//! `h(y + v - o, x + j - o, p)` with `o = (k-1)/2` — exactly the feature
//! value that kernel coefficient `w(v, j, p, d)` multiplies to produce
//! output pixel `(y, x)`. Examples stack block-row-wise.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::tensor::Tensor4;

/// The stacked lowered matrix (`N*r*s` rows, `k^2*c` columns).
#[derive(Debug, Clone)]
pub struct ConvLowered {
    matrix: Matrix,
    k: usize,
    channels: usize,
}

impl ConvLowered {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[e, H]` extension of the lowered matrix.
    pub fn extended(&self) -> Matrix {
        Matrix::from_fn(self.matrix.rows(), self.matrix.cols() + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                self.matrix.get(r, c - 1)
            }
        })
    }

    /// `[e, H] * [b_d; omega_d]` for one output channel's stacked kernel
    /// vector: must equal the vectorized convolution output.
    pub fn apply_extended(&self, bias: f64, omega: &[f64]) -> Result<Vec<f64>> {
        if omega.len() != self.matrix.cols() {
            return Err(Error::ShapeMismatch {
                context: "ConvLowered::apply_extended",
                expected: format!("kernel vector of length {}", self.matrix.cols()),
                actual: format!("kernel vector of length {}", omega.len()),
            });
        }
        let mut out = self.matrix.matvec(omega)?;
        for x in &mut out {
            *x += bias;
        }
        Ok(out)
    }
}

/// Builds the lowered matrix for every example in the batch.
pub fn cnn_lower(x: &Tensor4, k: usize) -> Result<ConvLowered> {
    if k % 2 == 0 {
        return Err(Error::EvenKernel { k });
    }
    let (n, r, s, c) = x.shape();
    let o = (k / 2) as isize;
    let mut matrix = Matrix::zeros(n * r * s, k * k * c);
    for i in 0..n {
        for xs in 0..s {
            for y in 0..r {
                let row_idx = i * (r * s) + xs * r + y;
                let row = matrix.row_mut(row_idx);
                for p in 0..c {
                    for j in 0..k {
                        for v in 0..k {
                            let col = p * k * k + j * k + v;
                            row[col] = x.get_padded(
                                i,
                                y as isize + v as isize - o,
                                xs as isize + j as isize - o,
                                p,
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(ConvLowered {
        matrix,
        k,
        channels: c,
    })
}

/// Exact per-kernel-position statistics: entry `p*k^2 + a*k + t` is the
/// mean/variance (divisor `N*r*s`) over the zero-padded window that kernel
/// position `(t, a)` traces across every example of channel `p`. Computed
/// directly from window sums, independent of [`cnn_lower`].
pub fn cnn_stats_exact(x: &Tensor4, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k % 2 == 0 {
        return Err(Error::EvenKernel { k });
    }
    let (n, r, s, c) = x.shape();
    let o = (k / 2) as isize;
    let count = (n * r * s) as f64;
    let mut mu = vec![0.0; k * k * c];
    let mut sigma2 = vec![0.0; k * k * c];
    for p in 0..c {
        for a in 0..k {
            for t in 0..k {
                let idx = p * k * k + a * k + t;
                let mut sum = 0.0;
                for i in 0..n {
                    for y in 0..r {
                        for xs in 0..s {
                            sum += x.get_padded(
                                i,
                                y as isize + t as isize - o,
                                xs as isize + a as isize - o,
                                p,
                            );
                        }
                    }
                }
                let mean = sum / count;
                let mut var = 0.0;
                for i in 0..n {
                    for y in 0..r {
                        for xs in 0..s {
                            let d = x.get_padded(
                                i,
                                y as isize + t as isize - o,
                                xs as isize + a as isize - o,
                                p,
                            ) - mean;
                            var += d * d;
                        }
                    }
                }
                mu[idx] = mean;
                sigma2[idx] = var / count;
            }
        }
    }
    Ok((mu, sigma2))
}

/// Approximate statistics: per-channel mean/variance over the batch and
/// both spatial dimensions (no padding involved). Length `c`.
pub fn cnn_stats_approx(x: &Tensor4) -> Result<(Vec<f64>, Vec<f64>)> {
    crate::linalg::column_stats(&x.to_channel_matrix())
}

/// Upper bound on `|exact_mean - channel_mean|`:
/// `(k-1) * (1/(2r) + 1/(2s) - (k-1)/(4rs)) * max|h|`.
pub fn stats_approx_error_bound(k: usize, r: usize, s: usize, max_abs: f64) -> f64 {
    let k1 = (k - 1) as f64;
    let (rf, sf) = (r as f64, s as f64);
    k1 * (0.5 / rf + 0.5 / sf - k1 / (4.0 * rf * sf)) * max_abs
}

/// The 4x3-input / 3x3-kernel lowering written out by hand: the input
/// tensor (entry at row a, column b holds the value 10a + b, 1-based) and
/// the full 12x9 matrix it must lower to. Used as an entry-for-entry
/// regression anchor.
pub fn worked_lowering_example() -> (Tensor4, Matrix) {
    let input = Tensor4::from_fn(1, 4, 3, 1, |_, y, xs, _| (10 * (y + 1) + (xs + 1)) as f64);
    let h = |a: usize, b: usize| (10 * a + b) as f64;
    let z = 0.0;
    #[rustfmt::skip]
    let expected = Matrix::from_rows(&[
        vec![z,       z,       z,       z,       h(1,1), h(2,1), z,      h(1,2), h(2,2)],
        vec![z,       z,       z,       h(1,1),  h(2,1), h(3,1), h(1,2), h(2,2), h(3,2)],
        vec![z,       z,       z,       h(2,1),  h(3,1), h(4,1), h(2,2), h(3,2), h(4,2)],
        vec![z,       z,       z,       h(3,1),  h(4,1), z,      h(3,2), h(4,2), z     ],
        vec![z,       h(1,1),  h(2,1),  z,       h(1,2), h(2,2), z,      h(1,3), h(2,3)],
        vec![h(1,1),  h(2,1),  h(3,1),  h(1,2),  h(2,2), h(3,2), h(1,3), h(2,3), h(3,3)],
        vec![h(2,1),  h(3,1),  h(4,1),  h(2,2),  h(3,2), h(4,2), h(2,3), h(3,3), h(4,3)],
        vec![h(3,1),  h(4,1),  z,       h(3,2),  h(4,2), z,      h(3,3), h(4,3), z     ],
        vec![z,       h(1,2),  h(2,2),  z,       h(1,3), h(2,3), z,      z,      z     ],
        vec![h(1,2),  h(2,2),  h(3,2),  h(1,3),  h(2,3), h(3,3), z,      z,      z     ],
        vec![h(2,2),  h(3,2),  h(4,2),  h(2,3),  h(3,3), h(4,3), z,      z,      z     ],
        vec![h(3,2),  h(4,2),  z,       h(3,3),  h(4,3), z,      z,      z,      z     ],
    ])
    .expect("rectangular table");
    (input, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{column_stats, Rng};
    use crate::nn::conv2d_same;
    use crate::nn::tensor::KernelTensor;

    #[test]
    fn unit_kernel_columns_are_vectorized_planes() {
        let mut rng = Rng::new(31);
        let x = Tensor4::from_fn(2, 3, 4, 2, |_, _, _, _| rng.normal());
        let lowered = cnn_lower(&x, 1).unwrap();
        let m = lowered.matrix();
        assert_eq!((m.rows(), m.cols()), (2 * 12, 2));
        for i in 0..2 {
            for p in 0..2 {
                let plane = x.vec_plane(i, p);
                for (pos, &v) in plane.iter().enumerate() {
                    assert_eq!(m.get(i * 12 + pos, p), v);
                }
            }
        }
    }

    #[test]
    fn lowered_product_reproduces_convolution() {
        let mut rng = Rng::new(32);
        for &(n, r, s, c_in, c_out, k) in
            &[(1, 4, 3, 1, 1, 3), (2, 5, 5, 3, 2, 3), (1, 7, 4, 2, 3, 5)]
        {
            let x = Tensor4::from_fn(n, r, s, c_in, |_, _, _, _| rng.normal());
            let kernel = KernelTensor::from_fn(k, c_in, c_out, |_, _, _, _| rng.normal());
            let bias: Vec<f64> = (0..c_out).map(|_| rng.normal()).collect();
            let out = conv2d_same(&x, &kernel, &bias);
            let lowered = cnn_lower(&x, k).unwrap();
            for d in 0..c_out {
                let got = lowered.apply_extended(bias[d], kernel.omega(d)).unwrap();
                let mut expect = Vec::new();
                for i in 0..n {
                    expect.extend(out.vec_plane(i, d));
                }
                let err: f64 = got
                    .iter()
                    .zip(&expect)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-12, "max err {err} for shape ({n},{r},{s},{c_in},{c_out},{k})");
            }
        }
    }

    #[test]
    fn exact_stats_match_lowered_column_stats() {
        // Independent routes: window sums vs column statistics of the
        // lowered matrix.
        let mut rng = Rng::new(33);
        let x = Tensor4::from_fn(2, 6, 5, 2, |_, _, _, _| rng.normal());
        let (mu, var) = cnn_stats_exact(&x, 3).unwrap();
        let lowered = cnn_lower(&x, 3).unwrap();
        let (mu2, var2) = column_stats(lowered.matrix()).unwrap();
        for i in 0..mu.len() {
            assert!((mu[i] - mu2[i]).abs() <= 1e-12);
            assert!((var[i] - var2[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn k1_exact_equals_approx() {
        let mut rng = Rng::new(34);
        let x = Tensor4::from_fn(3, 4, 4, 2, |_, _, _, _| rng.normal());
        let (mu_e, var_e) = cnn_stats_exact(&x, 1).unwrap();
        let (mu_a, var_a) = cnn_stats_approx(&x).unwrap();
        assert_eq!(mu_e.len(), 2);
        for p in 0..2 {
            assert!((mu_e[p] - mu_a[p]).abs() <= 1e-13);
            assert!((var_e[p] - var_a[p]).abs() <= 1e-13);
        }
    }

    #[test]
    fn constant_maps_agree_in_the_interior_free_case() {
        let x = Tensor4::from_fn(2, 5, 5, 1, |_, _, _, _| 3.5);
        let (mu_e, _) = cnn_stats_exact(&x, 1).unwrap();
        let (mu_a, _) = cnn_stats_approx(&x).unwrap();
        assert!((mu_e[0] - 3.5).abs() < 1e-14);
        assert!((mu_a[0] - 3.5).abs() < 1e-14);
    }

    #[test]
    fn mean_error_bound_never_violated() {
        let mut rng = Rng::new(35);
        for &(r, s, k) in &[(9, 9, 3), (12, 8, 5), (6, 10, 3)] {
            let x = Tensor4::from_fn(2, r, s, 2, |_, _, _, _| rng.uniform(-2.0, 2.0));
            let max_abs = x.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let bound = stats_approx_error_bound(k, r, s, max_abs);
            let (mu_e, _) = cnn_stats_exact(&x, k).unwrap();
            let (mu_a, _) = cnn_stats_approx(&x).unwrap();
            for p in 0..2 {
                for pos in 0..k * k {
                    let err = (mu_e[p * k * k + pos] - mu_a[p]).abs();
                    assert!(err <= bound, "err {err} > bound {bound}");
                }
            }
        }
    }

    #[test]
    fn worked_four_by_three_example_entry_for_entry() {
        let (x, expected) = worked_lowering_example();
        let lowered = cnn_lower(&x, 3).unwrap();
        assert_eq!(lowered.matrix().rows(), 12);
        assert_eq!(lowered.matrix().cols(), 9);
        for r in 0..12 {
            for c in 0..9 {
                assert_eq!(
                    lowered.matrix().get(r, c),
                    expected.get(r, c),
                    "entry ({r}, {c})"
                );
            }
        }
    }

    #[test]
    fn even_kernel_is_rejected() {
        let x = Tensor4::zeros(1, 3, 3, 1);
        assert!(cnn_lower(&x, 2).is_err());
        assert!(cnn_stats_exact(&x, 4).is_err());
    }
}
