//! Per-column batch statistics.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-column mean and biased variance (divisor N) of a batch matrix whose
/// rows are examples.
pub fn column_stats(a: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.rows() == 0 {
        return Err(Error::ShapeMismatch {
            context: "column_stats",
            expected: "at least one row".to_string(),
            actual: "0 rows".to_string(),
        });
    }
    let n = a.rows() as f64;
    let mut mean = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += a.get(r, c);
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for (c, v) in var.iter_mut().enumerate() {
            let d = a.get(r, c) - mean[c];
            *v += d * d;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_column() {
        let a = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let (mean, var) = column_stats(&a).unwrap();
        assert_eq!(mean, vec![2.0]);
        assert_eq!(var, vec![1.0]);
    }

    #[test]
    fn constant_column_has_zero_variance() {
        let a = Matrix::from_fn(5, 2, |_, c| if c == 0 { 4.5 } else { -1.0 });
        let (mean, var) = column_stats(&a).unwrap();
        assert_eq!(mean, vec![4.5, -1.0]);
        assert!(var[0].abs() < 1e-15 && var[1].abs() < 1e-15);
    }

    #[test]
    fn three_row_example() {
        // mean (3, 4); variance with divisor N: ((1-3)^2+(3-3)^2+(5-3)^2)/3 = 8/3.
        let a = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (mean, var) = column_stats(&a).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-15);
        assert!((mean[1] - 4.0).abs() < 1e-15);
        assert!((var[0] - 8.0 / 3.0).abs() < 1e-15);
        assert!((var[1] - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(column_stats(&Matrix::zeros(0, 3)).is_err());
    }
}
