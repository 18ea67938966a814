//! Synthetic two-class dataset with deliberately ill-scaled features.
//!
//! Feature j is Gaussian with standard deviation drawn log-uniformly from
//! `[1, 10^scale_decades]`, so the columns of the design matrix span that
//! many orders of magnitude. Labels come from a fixed random linear rule.

use super::{Dataset, Inputs};
use crate::linalg::{Matrix, Rng};

pub fn synth_illconditioned(
    n_features: usize,
    n_total: usize,
    scale_decades: f64,
    seed: u64,
) -> Dataset {
    let mut rng = Rng::new(Rng::derive_seed(seed, "synth-illconditioned"));
    let scales: Vec<f64> = (0..n_features)
        .map(|_| 10f64.powf(rng.uniform(0.0, scale_decades)))
        .collect();
    let rule: Vec<f64> = (0..n_features).map(|_| rng.normal()).collect();

    let mut inputs = Matrix::zeros(n_total, n_features);
    let mut labels = Vec::with_capacity(n_total);
    for r in 0..n_total {
        let row = inputs.row_mut(r);
        for (c, x) in row.iter_mut().enumerate() {
            *x = scales[c] * rng.normal();
        }
        let score: f64 = row.iter().zip(&rule).map(|(x, w)| x * w).sum();
        labels.push(usize::from(score > 0.0));
    }
    Dataset {
        inputs: Inputs::Flat(inputs),
        labels,
        num_classes: 2,
    }
}
