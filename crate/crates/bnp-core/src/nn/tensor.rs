//! Batched feature-map and kernel tensors for convolution layers.
//!
//! Feature maps are channel-last: shape `(n, r, s, c)` where `r` indexes the
//! first (row) spatial dimension and `s` the second. Storage is row-major in
//! that index order.
//!
//! Kernels have shape `(k, k, c_in, c_out)` indexed `(v, j, p, d)` with `v`
//! the kernel row, `j` the kernel column, `p` the input channel, and `d` the
//! output channel. Storage is grouped by output channel so that the slice
//! for a fixed `d` is exactly the vector reshaping of the per-channel kernel
//! stack with the first index varying fastest: position `p*k*k + j*k + v`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    r: usize,
    s: usize,
    c: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, r: usize, s: usize, c: usize) -> Self {
        Self {
            n,
            r,
            s,
            c,
            data: vec![0.0; n * r * s * c],
        }
    }

    pub fn from_data(n: usize, r: usize, s: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * r * s * c {
            return Err(Error::ShapeMismatch {
                context: "Tensor4::from_data",
                expected: format!("{} elements", n * r * s * c),
                actual: format!("{} elements", data.len()),
            });
        }
        Ok(Self { n, r, s, c, data })
    }

    pub fn from_fn(
        n: usize,
        r: usize,
        s: usize,
        c: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(n, r, s, c);
        for i in 0..n {
            for y in 0..r {
                for x in 0..s {
                    for p in 0..c {
                        let v = f(i, y, x, p);
                        t.set(i, y, x, p, v);
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.r, self.s, self.c)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, y: usize, x: usize, p: usize) -> f64 {
        self.data[((i * self.r + y) * self.s + x) * self.c + p]
    }

    /// Zero-padded read: indices may be negative or out of range.
    #[inline]
    pub fn get_padded(&self, i: usize, y: isize, x: isize, p: usize) -> f64 {
        if y < 0 || x < 0 || y as usize >= self.r || x as usize >= self.s {
            0.0
        } else {
            self.get(i, y as usize, x as usize, p)
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, y: usize, x: usize, p: usize, v: f64) {
        self.data[((i * self.r + y) * self.s + x) * self.c + p] = v;
    }

    #[inline]
    pub fn add_assign(&mut self, i: usize, y: usize, x: usize, p: usize, v: f64) {
        self.data[((i * self.r + y) * self.s + x) * self.c + p] += v;
    }

    /// Flattens each example to a feature row (row-major over y, x, p).
    pub fn flatten(&self) -> Matrix {
        let features = self.r * self.s * self.c;
        Matrix::new(self.n, features, self.data.clone()).expect("consistent tensor storage")
    }

    /// Inverse of [`flatten`] given the spatial shape.
    pub fn from_flat(m: &Matrix, r: usize, s: usize, c: usize) -> Result<Self> {
        if m.cols() != r * s * c {
            return Err(Error::ShapeMismatch {
                context: "Tensor4::from_flat",
                expected: format!("{} columns", r * s * c),
                actual: format!("{} columns", m.cols()),
            });
        }
        Self::from_data(m.rows(), r, s, c, m.data().to_vec())
    }

    /// Views `(n, r, s, c)` as an `(n*r*s) x c` matrix: one row per pixel.
    /// Used for per-channel statistics and channel-wise batch norm.
    pub fn to_channel_matrix(&self) -> Matrix {
        Matrix::new(self.n * self.r * self.s, self.c, self.data.clone())
            .expect("consistent tensor storage")
    }

    pub fn from_channel_matrix(m: &Matrix, n: usize, r: usize, s: usize) -> Result<Self> {
        if m.rows() != n * r * s {
            return Err(Error::ShapeMismatch {
                context: "Tensor4::from_channel_matrix",
                expected: format!("{} rows", n * r * s),
                actual: format!("{} rows", m.rows()),
            });
        }
        Self::from_data(n, r, s, m.cols(), m.data().to_vec())
    }

    /// The vector reshaping of one example's output-plane `(.,.,d)` with the
    /// first (row) dimension varying fastest: position `(x)*r + y`.
    pub fn vec_plane(&self, i: usize, d: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.r * self.s);
        for x in 0..self.s {
            for y in 0..self.r {
                out.push(self.get(i, y, x, d));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    k: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<f64>,
}

impl KernelTensor {
    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            k,
            c_in,
            c_out,
            data: vec![0.0; k * k * c_in * c_out],
        }
    }

    pub fn from_fn(
        k: usize,
        c_in: usize,
        c_out: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(k, c_in, c_out);
        for d in 0..c_out {
            for p in 0..c_in {
                for j in 0..k {
                    for v in 0..k {
                        let val = f(v, j, p, d);
                        t.set(v, j, p, d, val);
                    }
                }
            }
        }
        t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, v: usize, j: usize, p: usize, d: usize) -> usize {
        ((d * self.c_in + p) * self.k + j) * self.k + v
    }

    #[inline]
    pub fn get(&self, v: usize, j: usize, p: usize, d: usize) -> f64 {
        self.data[self.index(v, j, p, d)]
    }

    #[inline]
    pub fn set(&mut self, v: usize, j: usize, p: usize, d: usize, val: f64) {
        let i = self.index(v, j, p, d);
        self.data[i] = val;
    }

    /// The stacked per-input-channel kernel vector for output channel `d`,
    /// first index fastest: position `p*k*k + j*k + v`.
    pub fn omega(&self, d: usize) -> &[f64] {
        let len = self.c_in * self.k * self.k;
        &self.data[d * len..(d + 1) * len]
    }

    pub fn omega_mut(&mut self, d: usize) -> &mut [f64] {
        let len = self.c_in * self.k * self.k;
        &mut self.data[d * len..(d + 1) * len]
    }
}
