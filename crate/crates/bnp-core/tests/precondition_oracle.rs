//! The preconditioner's central contract: the in-place gradient update
//! formulas agree with the explicit `(1/q^2) P P^T g` matrix product on
//! every shape, and the transform behaves like the positive-definite
//! operator it is.

use bnp_core::bnp::{BnpState, LayerShape};
use bnp_core::linalg::{Matrix, Rng};
use bnp_core::nn::tensor::KernelTensor;
use proptest::prelude::*;

/// Explicit `(1/q^2) U D^2 U^T` for expanded statistics vectors.
fn explicit_transform(mu: &[f64], sigma_tilde2: &[f64], q2: f64) -> Matrix {
    let n1 = mu.len() + 1;
    let mut u = Matrix::identity(n1);
    for (j, &m) in mu.iter().enumerate() {
        u.set(0, j + 1, -m);
    }
    let mut d2 = vec![1.0];
    d2.extend(sigma_tilde2.iter().map(|&v| 1.0 / v));
    u.matmul(&Matrix::diag(&d2))
        .and_then(|ud| ud.matmul(&u.transpose()))
        .unwrap()
        .scale(1.0 / q2)
}

fn rel_err(got: &[f64], expect: &[f64]) -> f64 {
    let scale = expect
        .iter()
        .fold(0.0f64, |m, &x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    got.iter()
        .zip(expect)
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()))
        / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(80))]

    #[test]
    fn dense_update_matches_explicit_product(
        n_in in 1usize..48,
        n_out in 1usize..12,
        n_batch in 1usize..80,
        seed in any::<u64>(),
        stabilize in any::<bool>(),
    ) {
        let (eps1, eps2) = if stabilize { (1e-2, 1e-4) } else { (0.0, 0.0) };
        let mut rng = Rng::new(seed);
        let mut state = BnpState::new(LayerShape::Dense { n_in, n_out }, 0.99, eps1, eps2);
        state.mu = (0..n_in).map(|_| 2.0 * rng.normal()).collect();
        state.sigma2 = (0..n_in).map(|_| rng.normal().abs() + 0.03).collect();
        let gw = Matrix::from_fn(n_out, n_in, |_, _| rng.normal());
        let gb: Vec<f64> = (0..n_out).map(|_| rng.normal()).collect();

        let (gw2, gb2) = state.precondition_dense(&gw, &gb, n_batch).unwrap();
        let q2 = (n_in as f64 / n_batch as f64).max(1.0);
        let m = explicit_transform(&state.mu, &state.stabilized_variance(), q2);
        for i in 0..n_out {
            let mut g = vec![gb[i]];
            g.extend_from_slice(gw.row(i));
            let expect = m.matvec(&g).unwrap();
            let mut got = vec![gb2[i]];
            got.extend_from_slice(gw2.row(i));
            prop_assert!(rel_err(&got, &expect) <= 1e-12);
        }
    }

    #[test]
    fn conv_update_matches_explicit_product(
        k_pick in 0usize..3,
        c_in in 1usize..5,
        c_out in 1usize..4,
        n_batch in 1usize..16,
        seed in any::<u64>(),
    ) {
        let k = [1usize, 3, 5][k_pick];
        let (r, s) = (k + 2, k + 3);
        let mut rng = Rng::new(seed);
        let mut state = BnpState::new(
            LayerShape::Conv { k, c_in, c_out, r, s },
            0.99,
            1e-2,
            1e-4,
        );
        state.mu = (0..c_in).map(|_| 2.0 * rng.normal()).collect();
        state.sigma2 = (0..c_in).map(|_| rng.normal().abs() + 0.03).collect();
        let mut gk = KernelTensor::zeros(k, c_in, c_out);
        for x in gk.data_mut() {
            *x = rng.normal();
        }
        let gb: Vec<f64> = (0..c_out).map(|_| rng.normal()).collect();

        let (gk2, gb2) = state.precondition_conv(&gk, &gb, n_batch).unwrap();
        let sig = state.stabilized_variance();
        let mut mu_exp = Vec::new();
        let mut sig_exp = Vec::new();
        for p in 0..c_in {
            for _ in 0..k * k {
                mu_exp.push(state.mu[p]);
                sig_exp.push(sig[p]);
            }
        }
        let q2 = ((c_in * k * k) as f64 / n_batch as f64).max(((r * s) as f64).sqrt());
        let m = explicit_transform(&mu_exp, &sig_exp, q2);
        for d in 0..c_out {
            let mut g = vec![gb[d]];
            g.extend_from_slice(gk.omega(d));
            let expect = m.matvec(&g).unwrap();
            let mut got = vec![gb2[d]];
            got.extend_from_slice(gk2.omega(d));
            prop_assert!(rel_err(&got, &expect) <= 1e-12);
        }
    }

    #[test]
    fn preconditioned_direction_is_a_descent_direction(
        n_in in 1usize..32,
        seed in any::<u64>(),
    ) {
        // P P^T is positive definite for positive stabilized variances, so
        // the preconditioned gradient keeps a positive inner product with
        // the raw one.
        let mut rng = Rng::new(seed);
        let mut state = BnpState::new(LayerShape::Dense { n_in, n_out: 1 }, 0.99, 1e-2, 1e-4);
        state.mu = (0..n_in).map(|_| rng.normal()).collect();
        state.sigma2 = (0..n_in).map(|_| rng.normal().abs()).collect();
        let gw = Matrix::from_fn(1, n_in, |_, _| rng.normal());
        let gb = vec![rng.normal()];
        let norm2: f64 = gw.data().iter().map(|x| x * x).sum::<f64>() + gb[0] * gb[0];
        prop_assume!(norm2 > 1e-12);
        let (gw2, gb2) = state.precondition_dense(&gw, &gb, 8).unwrap();
        let inner: f64 = gw
            .data()
            .iter()
            .zip(gw2.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + gb[0] * gb2[0];
        prop_assert!(inner > 0.0, "inner product {inner}");
    }

    #[test]
    fn single_example_never_divides_by_zero(
        n_in in 1usize..32,
        seed in any::<u64>(),
    ) {
        // Batch-statistics mode at N = 1: the variance estimate degenerates
        // to (h - mu)^2, which can be exactly zero; the floor eps2 keeps
        // the divisor positive.
        let mut rng = Rng::new(seed);
        let mut state = BnpState::new(LayerShape::Dense { n_in, n_out: 2 }, 0.99, 1e-2, 1e-4);
        state.use_running_stats = false;
        let h = Matrix::from_fn(1, n_in, |_, _| rng.normal());
        state.update_stats_dense(&h).unwrap();
        // Worst case: the sample equals the running mean exactly.
        let mut state2 = state.clone();
        state2.mu = h.row(0).to_vec();
        state2.update_stats_dense(&h).unwrap();
        for st in [&state, &state2] {
            let gw = Matrix::from_fn(2, n_in, |_, _| rng.normal());
            let gb = vec![rng.normal(), rng.normal()];
            let (gw2, gb2) = st.precondition_dense(&gw, &gb, 1).unwrap();
            prop_assert!(gw2.data().iter().all(|x| x.is_finite()));
            prop_assert!(gb2.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn single_channel_1x1_conv_reduces_to_dense() {
    // With c = 1 and k = 1 the kernel stack is a 1-feature dense layer; the
    // two code paths must agree exactly once the q rules are aligned.
    let mut rng = Rng::new(44);
    let (r, s) = (5, 7);
    let mut conv_state = BnpState::new(
        LayerShape::Conv {
            k: 1,
            c_in: 1,
            c_out: 3,
            r,
            s,
        },
        0.99,
        1e-2,
        1e-4,
    );
    conv_state.mu = vec![0.7];
    conv_state.sigma2 = vec![0.34];
    let mut dense_state = BnpState::new(LayerShape::Dense { n_in: 1, n_out: 3 }, 0.99, 1e-2, 1e-4);
    dense_state.mu = conv_state.mu.clone();
    dense_state.sigma2 = conv_state.sigma2.clone();

    let mut gk = KernelTensor::zeros(1, 1, 3);
    for x in gk.data_mut() {
        *x = rng.normal();
    }
    let gw = Matrix::new(3, 1, gk.data().to_vec()).unwrap();
    let gb: Vec<f64> = (0..3).map(|_| rng.normal()).collect();

    // Same q^2 supplied to both paths isolates the shared transform.
    let q2 = 2.5;
    let (gk2, gb2_conv) = conv_state.precondition_conv_with_q2(&gk, &gb, q2).unwrap();
    let (gw2, gb2_dense) = dense_state.precondition_dense_with_q2(&gw, &gb, q2).unwrap();
    for d in 0..3 {
        assert_eq!(gk2.get(0, 0, 0, d), gw2.get(d, 0));
        assert_eq!(gb2_conv[d], gb2_dense[d]);
    }

    // And the two layer kinds' q rules differ exactly as documented.
    assert_eq!(
        LayerShape::Dense { n_in: 1, n_out: 3 }.q_squared(4),
        1.0
    );
    assert_eq!(
        LayerShape::Conv {
            k: 1,
            c_in: 1,
            c_out: 3,
            r,
            s
        }
        .q_squared(4),
        ((r * s) as f64).sqrt()
    );
}

#[test]
fn identity_limit_is_plain_sgd() {
    // mu -> 0, sigma~ -> 1, q -> 1 reduces the preconditioned step to the
    // raw gradient step exactly.
    let state = BnpState::new(LayerShape::Dense { n_in: 5, n_out: 4 }, 0.99, 0.0, 0.0);
    let mut rng = Rng::new(45);
    let gw = Matrix::from_fn(4, 5, |_, _| rng.normal());
    let gb: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let (gw2, gb2) = state.precondition_dense(&gw, &gb, 16).unwrap();
    assert_eq!(gw.data(), gw2.data());
    assert_eq!(gb, gb2);
}

#[test]
fn conv_identity_limit_is_plain_sgd() {
    use bnp_core::bnp::{BnpState, LayerShape};
    let state = BnpState::new(
        LayerShape::Conv {
            k: 3,
            c_in: 2,
            c_out: 2,
            r: 4,
            s: 4,
        },
        0.99,
        0.0,
        0.0,
    );
    let mut rng = Rng::new(46);
    let mut gk = KernelTensor::zeros(3, 2, 2);
    for x in gk.data_mut() {
        *x = rng.normal();
    }
    let gb = vec![rng.normal(), rng.normal()];
    // mu = 0, sigma~ = 1, and an explicit q^2 of 1 give the identity.
    let (gk2, gb2) = state.precondition_conv_with_q2(&gk, &gb, 1.0).unwrap();
    assert_eq!(gk.data(), gk2.data());
    assert_eq!(gb, gb2);
}
