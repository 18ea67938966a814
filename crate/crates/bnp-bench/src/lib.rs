//! Shared fixtures for the kernel benchmarks.

use bnp_core::bnp::{BnpState, LayerShape};
use bnp_core::linalg::{Matrix, Rng};
use bnp_core::nn::tensor::Tensor4;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn random_tensor(n: usize, r: usize, s: usize, c: usize, seed: u64) -> Tensor4 {
    let mut rng = Rng::new(seed);
    Tensor4::from_fn(n, r, s, c, |_, _, _, _| rng.normal())
}

pub fn dense_state(n_in: usize, n_out: usize, seed: u64) -> BnpState {
    let mut rng = Rng::new(seed);
    let mut state = BnpState::with_defaults(LayerShape::Dense { n_in, n_out });
    state.mu = (0..n_in).map(|_| rng.normal()).collect();
    state.sigma2 = (0..n_in).map(|_| rng.normal().abs() + 0.1).collect();
    state
}
