//! Singular values, symmetric eigenvalues, and condition numbers.
//!
//! Singular values come from one-sided (Hestenes) Jacobi, which delivers
//! high relative accuracy on small dense matrices and is fully
//! deterministic. Symmetric eigenvalues use the classical cyclic Jacobi
//! rotation scheme. The condition number follows the nonzero-singular-value
//! convention: `sigma_max / sigma*_min` where `sigma*_min` is the smallest
//! singular value above `rank_tol * sigma_max`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Hard cap on matrix extent; everything here is meant for desk scale.
pub const MAX_DIM: usize = 5000;

const MAX_SWEEPS: usize = 100;

/// Singular values sorted descending, plus the tolerance used to decide
/// which of them count as nonzero.
#[derive(Debug, Clone)]
pub struct SvdResult {
    singular_values: Vec<f64>,
    rank_tolerance: f64,
}

impl SvdResult {
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Smallest singular value above `rank_tolerance * sigma_max`.
    pub fn sigma_min_nonzero(&self) -> Option<f64> {
        let cutoff = self.rank_tolerance * self.sigma_max();
        self.singular_values
            .iter()
            .copied()
            .filter(|&s| s > cutoff)
            .last()
    }

    pub fn rank(&self) -> usize {
        let cutoff = self.rank_tolerance * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }

    pub fn condition_number(&self) -> Result<f64> {
        let min = self.sigma_min_nonzero().ok_or(Error::AllZero)?;
        Ok(self.sigma_max() / min)
    }
}

/// Default detection threshold for "nonzero" singular values.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * 1e-12
}

/// Singular values of a dense matrix via one-sided Jacobi.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    svd_with_tol(a, default_rank_tol(a.rows(), a.cols()))
}

pub fn svd_with_tol(a: &Matrix, rank_tol: f64) -> Result<SvdResult> {
    let max_dim = a.rows().max(a.cols());
    if max_dim > MAX_DIM {
        return Err(Error::TooLarge {
            dim: max_dim,
            max: MAX_DIM,
        });
    }
    a.check_finite()?;

    // Work on columns; orient so there are at least as many rows as columns.
    let (m, n, mut cols) = to_columns_tallest(a);
    debug_assert!(m >= n);

    // Hestenes sweeps: orthogonalize every column pair until no rotation
    // fires. The rotation threshold is relative, which preserves the high
    // relative accuracy of small singular values.
    let tol = 1e-15;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = column_moments(&cols, m, p, q);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut cols, m, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| {
            cols[j * m..(j + 1) * m]
                .iter()
                .map(|&x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));

    Ok(SvdResult {
        singular_values: sigma,
        rank_tolerance: rank_tol,
    })
}

fn to_columns_tallest(a: &Matrix) -> (usize, usize, Vec<f64>) {
    let (m, n, transpose) = if a.rows() >= a.cols() {
        (a.rows(), a.cols(), false)
    } else {
        (a.cols(), a.rows(), true)
    };
    let mut cols = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            cols[j * m + i] = if transpose { a.get(j, i) } else { a.get(i, j) };
        }
    }
    (m, n, cols)
}

#[inline]
fn column_moments(cols: &[f64], m: usize, p: usize, q: usize) -> (f64, f64, f64) {
    let cp = &cols[p * m..(p + 1) * m];
    let cq = &cols[q * m..(q + 1) * m];
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for i in 0..m {
        alpha += cp[i] * cp[i];
        beta += cq[i] * cq[i];
        gamma += cp[i] * cq[i];
    }
    (alpha, beta, gamma)
}

#[inline]
fn rotate_columns(cols: &mut [f64], m: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    let (left, right) = cols.split_at_mut(hi * m);
    let cp = &mut left[lo * m..(lo + 1) * m];
    let cq = &mut right[..m];
    for i in 0..m {
        let (x, y) = (cp[i], cq[i]);
        cp[i] = c * x - s * y;
        cq[i] = s * x + c * y;
    }
}

/// `sigma_max / sigma*_min` with the default rank tolerance.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    svd(a)?.condition_number()
}

pub fn condition_number_with_tol(a: &Matrix, rank_tol: f64) -> Result<f64> {
    svd_with_tol(a, rank_tol)?.condition_number()
}

/// Eigenvalues of a symmetric matrix via cyclic two-sided Jacobi,
/// sorted descending. Only the values are accumulated.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch {
            context: "sym_eigenvalues",
            expected: "square matrix".to_string(),
            actual: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    a.check_finite()?;
    let n = a.rows();
    let mut w = a.clone();

    let frob = w.frobenius_norm();
    if frob == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let stop = 1e-15 * frob;

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = w.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = w.get(p, p);
                let aqq = w.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Apply the rotation to rows/columns p and q.
                for k in 0..n {
                    let akp = w.get(k, p);
                    let akq = w.get(k, q);
                    w.set(k, p, c * akp - s * akq);
                    w.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = w.get(p, k);
                    let aqk = w.get(q, k);
                    w.set(p, k, c * apk - s * aqk);
                    w.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| w.get(i, i)).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    Ok(eig)
}

/// Condition number of a symmetric positive semi-definite matrix:
/// `lambda_max / lambda*_min` over eigenvalues above `rank_tol * lambda_max`
/// in magnitude.
pub fn condition_number_psd(a: &Matrix) -> Result<f64> {
    let eig = sym_eigenvalues(a)?;
    let lambda_max = eig.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if lambda_max == 0.0 {
        return Err(Error::AllZero);
    }
    let cutoff = default_rank_tol(a.rows(), a.cols()) * lambda_max;
    let lambda_min = eig
        .iter()
        .map(|x| x.abs())
        .filter(|&x| x > cutoff)
        .fold(f64::INFINITY, f64::min);
    Ok(lambda_max / lambda_min)
}

/// Largest and smallest-nonzero eigenvalue magnitudes of a symmetric PSD
/// matrix, for rate computations.
pub fn psd_extremes(a: &Matrix) -> Result<(f64, f64)> {
    let eig = sym_eigenvalues(a)?;
    let lambda_max = eig.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if lambda_max == 0.0 {
        return Err(Error::AllZero);
    }
    let cutoff = default_rank_tol(a.rows(), a.cols()) * lambda_max;
    let lambda_min = eig
        .iter()
        .map(|x| x.abs())
        .filter(|&x| x > cutoff)
        .fold(f64::INFINITY, f64::min);
    Ok((lambda_max, lambda_min))
}
