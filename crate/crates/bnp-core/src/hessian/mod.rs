//! Exact per-neuron Hessians, preconditioners, and executable checks.
//!
//! For one neuron with stacked parameter vector `[bias; weight_row]`, the
//! Hessian of the mean mini-batch loss is `Hhat^T S Hhat`, where
//! `Hhat = [e, H]` extends the layer-input batch with an all-ones column and
//! `S` is diagonal with entries `(1/N) * L''(a_j)`, the per-sample second
//! derivative of the loss with respect to that neuron's pre-activation.
//! The preconditioner `P = U D` recenters (`U` unit upper-triangular with
//! first row `[1, -mu^T]`) and rescales (`D` diagonal `[1, 1/sigma]`), so
//! `Hhat P` has an all-ones first column and zero-mean unit-variance
//! remaining columns.

pub mod checks;
pub mod curvature;
pub mod equiv;
pub mod fd;
pub mod lower;
pub mod probe;

pub use checks::{run_all_checks, CheckRecord, Tolerances};
pub use curvature::{hidden_curvature_fd, output_curvature, CurvatureDiag};
pub use equiv::bn_step_equivalence;
pub use lower::{
    cnn_lower, cnn_stats_approx, cnn_stats_exact, stats_approx_error_bound, ConvLowered,
};
pub use probe::{norm_probe_ratio, norm_scaling_probe, quadratic_rate_probe, NormProbeRow, RateProbeResult};

use crate::error::{Error, Result};
use crate::linalg::{column_stats, condition_number, condition_number_psd, psd_extremes, Matrix};

/// Layer-input batch extended with the all-ones column: `[e, H]`.
#[derive(Debug, Clone)]
pub struct ExtendedActivation {
    matrix: Matrix,
}

impl ExtendedActivation {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn batch(&self) -> usize {
        self.matrix.rows()
    }

    /// Width including the ones column.
    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    /// Drops the ones column, recovering the raw activations.
    pub fn inner(&self) -> Matrix {
        Matrix::from_fn(self.matrix.rows(), self.matrix.cols() - 1, |r, c| {
            self.matrix.get(r, c + 1)
        })
    }
}

/// Prepends the all-ones column.
pub fn build_extended(h: &Matrix) -> ExtendedActivation {
    let matrix = Matrix::from_fn(h.rows(), h.cols() + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            h.get(r, c - 1)
        }
    });
    ExtendedActivation { matrix }
}

/// `Hhat^T S Hhat`: symmetric `(n+1) x (n+1)`, positive semi-definite when
/// every curvature entry is nonnegative.
pub fn assemble_hessian(ext: &ExtendedActivation, s: &CurvatureDiag) -> Result<Matrix> {
    if s.values().len() != ext.batch() {
        return Err(Error::ShapeMismatch {
            context: "assemble_hessian",
            expected: format!("{} curvature entries", ext.batch()),
            actual: format!("{} curvature entries", s.values().len()),
        });
    }
    let w = ext.width();
    let mut out = Matrix::zeros(w, w);
    for (j, &sj) in s.values().iter().enumerate() {
        if sj == 0.0 {
            continue;
        }
        let row = ext.matrix.row(j);
        for a in 0..w {
            let scaled = sj * row[a];
            let out_row = out.row_mut(a);
            for b in 0..w {
                out_row[b] += scaled * row[b];
            }
        }
    }
    Ok(out)
}

/// The recentering/rescaling transform built from batch statistics.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    /// Means of the raw activation columns (length n).
    pub mu: Vec<f64>,
    /// Diagonal of D (length n+1, leading entry 1).
    pub d: Vec<f64>,
    /// Norm-equalization factor; 1 unless set by the caller.
    pub q: f64,
}

impl Preconditioner {
    /// Builds U, D from the exact batch mean/variance of `h`, stabilized by
    /// `eps1`/`eps2` when nonzero. Fails on a zero-variance column when both
    /// are zero (the scaling would divide by zero).
    pub fn from_batch(h: &Matrix, eps1: f64, eps2: f64) -> Result<Self> {
        let (mu, sigma2) = column_stats(h)?;
        Self::from_stats(mu, sigma2, eps1, eps2)
    }

    /// Same transform from externally supplied statistics (e.g. running
    /// averages when the batch has a single example).
    pub fn from_stats(mu: Vec<f64>, sigma2: Vec<f64>, eps1: f64, eps2: f64) -> Result<Self> {
        let stabilized = crate::bnp::stabilize_variance(&sigma2, eps1, eps2);
        let mut d = Vec::with_capacity(stabilized.len() + 1);
        d.push(1.0);
        for (col, &v) in stabilized.iter().enumerate() {
            if v == 0.0 {
                return Err(Error::ZeroVarianceColumn { col });
            }
            d.push(1.0 / v.sqrt());
        }
        Ok(Self { mu, d, q: 1.0 })
    }

    pub fn width(&self) -> usize {
        self.d.len()
    }

    /// The unit upper-triangular centering matrix with first row `[1, -mu^T]`.
    pub fn u_matrix(&self) -> Matrix {
        let n1 = self.width();
        let mut u = Matrix::identity(n1);
        for (j, &m) in self.mu.iter().enumerate() {
            u.set(0, j + 1, -m);
        }
        u
    }

    pub fn d_matrix(&self) -> Matrix {
        Matrix::diag(&self.d)
    }

    /// `P = U D`.
    pub fn p_matrix(&self) -> Matrix {
        self.u_matrix()
            .matmul(&self.d_matrix())
            .expect("square shapes agree")
    }

    /// `Hhat P`: ones column plus normalized activations.
    pub fn apply_right(&self, ext: &ExtendedActivation) -> Result<Matrix> {
        ext.matrix().matmul(&self.p_matrix())
    }

    /// `P^T A P` for a symmetric `(n+1) x (n+1)` matrix.
    pub fn congruence(&self, a: &Matrix) -> Result<Matrix> {
        let p = self.p_matrix();
        p.transpose().matmul(a)?.matmul(&p)
    }

    /// Condition number of D (ratio of extreme diagonal entries, including
    /// the leading 1).
    pub fn kappa_d(&self) -> f64 {
        let max = self.d.iter().fold(0.0f64, |m, &x| m.max(x));
        let min = self.d.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        max / min
    }
}

/// Condition numbers of the activation matrix, its transforms, and the
/// assembled Hessians, plus the extreme Hessian eigenvalues.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub kappa_h: f64,
    pub kappa_hu: f64,
    pub kappa_g: f64,
    pub kappa_d: f64,
    pub kappa_hessian: f64,
    pub kappa_precond_hessian: f64,
    pub lambda_max: f64,
    pub lambda_star_min: f64,
}

/// Builds the full report for one layer input batch and curvature diagonal.
/// `eps1`/`eps2` stabilize the scaling exactly as in training; pass zeros
/// for the pure analysis transform.
pub fn condition_report(
    h: &Matrix,
    s: &CurvatureDiag,
    eps1: f64,
    eps2: f64,
) -> Result<ConditionReport> {
    let ext = build_extended(h);
    let pre = Preconditioner::from_batch(h, eps1, eps2)?;
    let kappa_h = condition_number(ext.matrix())?;
    let hu = ext.matrix().matmul(&pre.u_matrix())?;
    let kappa_hu = condition_number(&hu)?;
    let g = pre.apply_right(&ext)?;
    let kappa_g = condition_number(&g)?;
    let hessian = assemble_hessian(&ext, s)?;
    let kappa_hessian = condition_number_psd(&hessian)?;
    let precond = pre.congruence(&hessian)?;
    let kappa_precond_hessian = condition_number_psd(&precond)?;
    let (lambda_max, lambda_star_min) = psd_extremes(&hessian)?;
    Ok(ConditionReport {
        kappa_h,
        kappa_hu,
        kappa_g,
        kappa_d: pre.kappa_d(),
        kappa_hessian,
        kappa_precond_hessian,
        lambda_max,
        lambda_star_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    #[test]
    fn extended_of_empty_width_is_the_ones_column() {
        let ext = build_extended(&Matrix::zeros(4, 0));
        assert_eq!(ext.matrix().cols(), 1);
        assert!(ext.matrix().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn extended_of_zero_matrix() {
        let ext = build_extended(&Matrix::zeros(3, 2));
        for r in 0..3 {
            assert_eq!(ext.matrix().row(r), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn inner_recovers_the_original() {
        let mut rng = Rng::new(3);
        let h = Matrix::from_fn(5, 4, |_, _| rng.normal());
        let ext = build_extended(&h);
        assert_eq!(ext.inner(), h);
    }

    #[test]
    fn zero_curvature_gives_zero_hessian() {
        let ext = build_extended(&Matrix::from_fn(4, 3, |r, c| (r + c) as f64));
        let s = CurvatureDiag::from_values(vec![0.0; 4]);
        let hess = assemble_hessian(&ext, &s).unwrap();
        assert_eq!(hess.max_abs(), 0.0);
    }

    #[test]
    fn single_sample_hessian_is_rank_one_outer_product() {
        let h = Matrix::new(1, 1, vec![2.0]).unwrap();
        let ext = build_extended(&h);
        let s = CurvatureDiag::from_values(vec![1.0]);
        let hess = assemble_hessian(&ext, &s).unwrap();
        // hhat = (1, 2): hessian = hhat hhat^T.
        assert_eq!(hess.data(), &[1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn hessian_is_symmetric_and_psd_for_nonnegative_curvature() {
        let mut rng = Rng::new(10);
        let h = Matrix::from_fn(12, 5, |_, _| rng.normal());
        let ext = build_extended(&h);
        let s = CurvatureDiag::from_values((0..12).map(|_| rng.next_f64() * 0.2).collect());
        let hess = assemble_hessian(&ext, &s).unwrap();
        let sym_gap = hess.sub(&hess.transpose()).unwrap().max_abs();
        assert!(sym_gap <= 1e-12);
        let eig = crate::linalg::sym_eigenvalues(&hess).unwrap();
        let lambda_max = eig[0];
        for &l in &eig {
            assert!(l >= -1e-10 * lambda_max, "eigenvalue {l}");
        }
    }

    #[test]
    fn preconditioner_identity_when_already_normalized() {
        // Columns with mean 0 and variance exactly 1.
        let h = Matrix::new(4, 2, vec![1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0]).unwrap();
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0).unwrap();
        let p = pre.p_matrix();
        assert!(p.max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn unit_variance_nonzero_mean_keeps_d_identity() {
        let h = Matrix::new(4, 1, vec![2.0, 4.0, 2.0, 4.0]).unwrap();
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0).unwrap();
        assert_eq!(pre.d, vec![1.0, 1.0]);
        let u = pre.u_matrix();
        assert_eq!(u.get(0, 1), -3.0);
    }

    #[test]
    fn normalized_columns_have_zero_mean_unit_variance() {
        let mut rng = Rng::new(21);
        let h = Matrix::from_fn(32, 6, |_, c| 3.0 * rng.normal() + c as f64);
        let ext = build_extended(&h);
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0).unwrap();
        let g = pre.apply_right(&ext).unwrap();
        for r in 0..g.rows() {
            assert_eq!(g.get(r, 0), 1.0);
        }
        let (mean, var) = column_stats(&g).unwrap();
        for c in 1..g.cols() {
            assert!(mean[c].abs() <= 1e-12, "mean {}", mean[c]);
            assert!((var[c] - 1.0).abs() <= 1e-10, "var {}", var[c]);
        }
    }

    #[test]
    fn zero_variance_column_without_eps_is_an_error() {
        let h = Matrix::from_fn(4, 2, |r, c| if c == 0 { 7.0 } else { r as f64 });
        assert!(matches!(
            Preconditioner::from_batch(&h, 0.0, 0.0),
            Err(Error::ZeroVarianceColumn { col: 0 })
        ));
        // Stabilization rescues the same input.
        assert!(Preconditioner::from_batch(&h, 1e-2, 1e-4).is_ok());
    }
}
