//! Minimal dense linear algebra: matrices, singular values, condition
//! numbers, batch statistics, and a seeded deterministic RNG.

mod matrix;
mod rng;
mod stats;
mod svd;

pub use matrix::Matrix;
pub use rng::Rng;
pub use stats::column_stats;
pub use svd::{
    condition_number, condition_number_psd, condition_number_with_tol, default_rank_tol,
    psd_extremes, svd, svd_with_tol, sym_eigenvalues, SvdResult, MAX_DIM,
};
