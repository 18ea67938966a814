//! Monte-Carlo norm probe and the gradient-descent rate probe.

use crate::bnp::q_squared_dense;
use crate::error::Result;
use crate::linalg::{svd, Matrix, Rng};

/// One row of the norm-scaling table.
#[derive(Debug, Clone)]
pub struct NormProbeRow {
    pub width: usize,
    pub q: f64,
    /// Mean over trials of `||(1/q) [e, G]|| / sqrt(N)` with G standard
    /// normal.
    pub mean_scaled_norm: f64,
}

/// Spectral norm of `[e, G]` scaled by `1/q` and `1/sqrt(N)`, averaged over
/// seeded trials, for each width. The q normalization is supposed to make
/// the result roughly width-independent.
pub fn norm_scaling_probe(
    widths: &[usize],
    n_batch: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<NormProbeRow>> {
    let mut out = Vec::with_capacity(widths.len());
    for &width in widths {
        let q = q_squared_dense(width, n_batch).sqrt();
        let mut rng = Rng::new(Rng::derive_seed(seed, &format!("norm-probe-{width}")));
        let mut sum = 0.0;
        for _ in 0..trials {
            let g_hat = Matrix::from_fn(n_batch, width + 1, |_, c| {
                if c == 0 {
                    1.0
                } else {
                    rng.normal()
                }
            });
            let spectral = svd(&g_hat)?.sigma_max();
            sum += spectral / (q * (n_batch as f64).sqrt());
        }
        out.push(NormProbeRow {
            width,
            q,
            mean_scaled_norm: sum / trials as f64,
        });
    }
    Ok(out)
}

/// Max/min spread of the scaled norms across widths.
pub fn norm_probe_ratio(rows: &[NormProbeRow]) -> f64 {
    let max = rows.iter().fold(0.0f64, |m, r| m.max(r.mean_scaled_norm));
    let min = rows
        .iter()
        .fold(f64::INFINITY, |m, r| m.min(r.mean_scaled_norm));
    max / min
}

#[derive(Debug, Clone)]
pub struct RateProbeResult {
    pub kappa: f64,
    pub expected_ratio: f64,
    pub observed_ratio: f64,
    pub final_error: f64,
}

/// Gradient descent on the diagonal quadratic `f(x, y) = (x^2 + kappa y^2)/2`
/// with the optimal step `alpha = 2 / (1 + kappa)`, starting from (1, 1).
/// In exact arithmetic the error contracts by `(kappa-1)/(kappa+1)` every
/// step; the probe reports the geometric-mean contraction over the second
/// half of the run.
pub fn quadratic_rate_probe(kappa: f64, steps: usize) -> RateProbeResult {
    let alpha = 2.0 / (1.0 + kappa);
    let expected = (kappa - 1.0) / (kappa + 1.0);
    let (mut x, mut y) = (1.0f64, 1.0f64);
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push((x * x + y * y).sqrt());
    for _ in 0..steps {
        let (gx, gy) = (x, kappa * y);
        x -= alpha * gx;
        y -= alpha * gy;
        norms.push((x * x + y * y).sqrt());
    }
    let half = steps / 2;
    let first = norms[half];
    let last = *norms.last().expect("nonempty");
    let observed = if first == 0.0 {
        0.0
    } else {
        (last / first).powf(1.0 / (steps - half) as f64)
    };
    RateProbeResult {
        kappa,
        expected_ratio: expected,
        observed_ratio: observed,
        final_error: last,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_one_converges_in_one_step() {
        let r = quadratic_rate_probe(1.0, 4);
        assert_eq!(r.expected_ratio, 0.0);
        assert!(r.final_error <= 1e-15);
        assert_eq!(r.observed_ratio, 0.0);
    }

    #[test]
    fn kappa_ten_contracts_at_nine_elevenths() {
        // Closed form: |1 - alpha| = |1 - alpha*kappa| = 9/11.
        let r = quadratic_rate_probe(10.0, 60);
        assert!((r.expected_ratio - 9.0 / 11.0).abs() < 1e-15);
        assert!(
            (r.observed_ratio - r.expected_ratio).abs() <= 0.05 * r.expected_ratio,
            "observed {} expected {}",
            r.observed_ratio,
            r.expected_ratio
        );
    }

    #[test]
    fn kappa_hundred_contracts_at_ninety_nine_over_101() {
        let r = quadratic_rate_probe(100.0, 200);
        assert!((r.expected_ratio - 99.0 / 101.0).abs() < 1e-15);
        assert!((r.observed_ratio - r.expected_ratio).abs() <= 0.05 * r.expected_ratio);
    }

    #[test]
    fn wide_narrow_norms_stay_within_factor_three() {
        let rows = norm_scaling_probe(&[4, 64], 32, 8, 7).unwrap();
        assert!(norm_probe_ratio(&rows) <= 3.0);
    }

    #[test]
    fn narrow_matrix_norm_is_near_sqrt_n() {
        // Width 1, large N: the ones column dominates and the scaled norm
        // is close to 1.
        let rows = norm_scaling_probe(&[1], 256, 4, 9).unwrap();
        assert!((rows[0].mean_scaled_norm - 1.0).abs() < 0.2, "{}", rows[0].mean_scaled_norm);
    }

    #[test]
    fn q_spot_check_width_256_batch_64() {
        let rows = norm_scaling_probe(&[256], 64, 1, 1).unwrap();
        assert_eq!(rows[0].q, 2.0);
    }
}
