//! Named, seeded verification checks. Each check runs a numerical
//! experiment against a pinned tolerance and reports pass/fail plus the
//! measured values. The CLI's `verify` subcommand executes all of them; the
//! acceptance suite calls them with its own parameters.

use crate::bnp::{BnpState, LayerShape};
use crate::error::Result;
use crate::hessian::curvature::{hidden_curvature_fd, output_curvature};
use crate::hessian::equiv::bn_step_equivalence;
use crate::hessian::fd::{fd_gradients, fd_neuron_hessian, max_relative_gradient_error};
use crate::hessian::lower::{
    cnn_lower, cnn_stats_approx, cnn_stats_exact, stats_approx_error_bound,
};
use crate::hessian::probe::{norm_probe_ratio, norm_scaling_probe, quadratic_rate_probe};
use crate::hessian::{assemble_hessian, build_extended, Preconditioner};
use crate::linalg::{
    column_stats, condition_number, condition_number_psd, svd, Matrix, Rng,
};
use crate::nn::activation::Activation;
use crate::nn::init;
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::network::{Layer, Network, Value};
use crate::nn::tensor::{KernelTensor, Tensor4};

/// Pinned tolerances. `Default` carries the contract values; tests may
/// tamper with individual fields to confirm a check fails loudly.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Assembled Hessian vs central differences, relative to the largest
    /// reference entry.
    pub hessian_fd_rel: f64,
    /// Gradients vs central differences.
    pub gradient_fd_rel: f64,
    /// In-place preconditioning vs the explicit matrix product.
    pub precond_oracle_rel: f64,
    /// Multiplicative slack on conditioning inequalities.
    pub conditioning_slack: f64,
    /// Max/min spread of the scaled norm probe.
    pub norm_ratio_max: f64,
    /// One-step equivalence discrepancy.
    pub equivalence_rel: f64,
    /// Lowered-matrix product vs direct convolution.
    pub lowering_abs: f64,
    /// Observed vs predicted contraction ratio, relative.
    pub rate_rel: f64,
    /// Congruence-order identity for the preconditioned Hessian.
    pub identity_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hessian_fd_rel: 1e-5,
            gradient_fd_rel: 1e-6,
            precond_oracle_rel: 1e-12,
            conditioning_slack: 1e-8,
            norm_ratio_max: 3.0,
            equivalence_rel: 1e-10,
            lowering_abs: 1e-12,
            rate_rel: 0.05,
            identity_abs: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub name: &'static str,
    pub pass: bool,
    pub values: Vec<(String, f64)>,
}

impl CheckRecord {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            pass: true,
            values: Vec::new(),
        }
    }

    fn record(&mut self, key: &str, value: f64) {
        self.values.push((key.to_string(), value));
    }

    fn require(&mut self, ok: bool) {
        self.pass &= ok;
    }
}

/// Largest entry difference relative to the largest reference entry.
fn matrix_rel_err(a: &Matrix, reference: &Matrix) -> f64 {
    a.max_abs_diff(reference) / reference.max_abs().max(f64::MIN_POSITIVE)
}

fn vec_rel_err(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference
        .iter()
        .fold(0.0f64, |m, &x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(reference)
        .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
        / scale
}

/// Assembled per-neuron Hessian vs the central-difference Hessian on a
/// two-layer MLP, for an output neuron (analytic curvature) and a hidden
/// neuron (difference-quotient curvature, kink-safe samples only).
pub fn check_hessian_formula(seed: u64, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("hessian_formula");
    let (n_batch, n_in, hidden, classes) = (16usize, 8usize, 20usize, 10usize);

    // Output-layer neuron.
    {
        let mut rng = Rng::new(Rng::derive_seed(seed, "hessian-output"));
        let mut net = Network::new(vec![
            Layer::Dense(init::glorot_dense(n_in, hidden, Activation::Relu, &mut rng)),
            Layer::Dense(init::glorot_dense(hidden, classes, Activation::None, &mut rng)),
        ]);
        let batch = Matrix::from_fn(n_batch, n_in, |_, _| rng.normal());
        let labels: Vec<usize> = (0..n_batch).map(|_| rng.below(classes)).collect();
        let logits = net.forward(Value::Mat(batch.clone()))?;
        let hidden_acts = match &net.layers[1] {
            Layer::Dense(l) => l.cached_input().expect("forward ran").clone(),
            _ => unreachable!(),
        };
        let s = output_curvature(&logits, 0)?;
        let assembled = assemble_hessian(&build_extended(&hidden_acts), &s)?;
        let fd = fd_neuron_hessian(&net, &Value::Mat(batch), &labels, 1, 0, 1e-4)?;
        let err = matrix_rel_err(&assembled, &fd);
        rec.record("output_neuron_max_rel_err", err);
        rec.require(err <= tol.hessian_fd_rel);
    }

    // Hidden-layer neuron: retry derived seeds until no sample sits on a
    // ReLU kink, so the comparison is well posed.
    {
        let mut found = false;
        for attempt in 0..16u64 {
            let mut rng = Rng::new(Rng::derive_seed(seed, &format!("hessian-hidden-{attempt}")));
            let net = Network::new(vec![
                Layer::Dense(init::glorot_dense(n_in, hidden, Activation::Relu, &mut rng)),
                Layer::Dense(init::glorot_dense(hidden, classes, Activation::None, &mut rng)),
            ]);
            let batch = Matrix::from_fn(n_batch, n_in, |_, _| rng.normal());
            let labels: Vec<usize> = (0..n_batch).map(|_| rng.below(classes)).collect();
            let (s, skipped) = hidden_curvature_fd(&net, &batch, &labels, 0, 0, 1e-4)?;
            if skipped.iter().any(|&b| b) {
                continue;
            }
            let assembled = assemble_hessian(&build_extended(&batch), &s)?;
            let fd = fd_neuron_hessian(&net, &Value::Mat(batch), &labels, 0, 0, 1e-4)?;
            let err = matrix_rel_err(&assembled, &fd);
            rec.record("hidden_neuron_max_rel_err", err);
            rec.record("hidden_neuron_attempts", attempt as f64);
            rec.require(err <= tol.hessian_fd_rel);
            found = true;
            break;
        }
        rec.require(found);
    }
    Ok(rec)
}

/// Analytic gradients vs central differences for dense, batch-norm (both
/// backprop modes), and convolution layers.
pub fn check_gradients(seed: u64, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("gradient_check");
    let delta = 1e-5;

    // Two-layer MLP.
    {
        let mut rng = Rng::new(Rng::derive_seed(seed, "grad-mlp"));
        let mut net = Network::new(vec![
            Layer::Dense(init::glorot_dense(6, 12, Activation::Relu, &mut rng)),
            Layer::Dense(init::glorot_dense(12, 4, Activation::None, &mut rng)),
        ]);
        let batch = Value::Mat(Matrix::from_fn(10, 6, |_, _| rng.normal()));
        let labels: Vec<usize> = (0..10).map(|_| rng.below(4)).collect();
        let logits = net.forward(batch.clone())?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let analytic = net.backward(&dlogits)?;
        let fd = fd_gradients(&net, &batch, &labels, delta)?;
        let err = max_relative_gradient_error(&analytic, &fd);
        rec.record("mlp_max_rel_err", err);
        rec.require(err <= tol.gradient_fd_rel);
    }

    // Batch-norm network, gradients through the statistics and with
    // stop-gradient statistics.
    for (label, stop_grad) in [("bn_full", false), ("bn_stop_grad", true)] {
        let mut rng = Rng::new(Rng::derive_seed(seed, label));
        let mut bn = crate::nn::batchnorm::BatchNormLayer::new(5, 0.9, 1e-3);
        bn.stop_grad_stats = stop_grad;
        bn.gamma = (0..5).map(|_| 1.0 + 0.3 * rng.normal()).collect();
        bn.beta = (0..5).map(|_| 0.2 * rng.normal()).collect();
        let mut net = Network::new(vec![
            Layer::Dense(init::glorot_dense(4, 5, Activation::Relu, &mut rng)),
            Layer::BatchNorm(bn),
            Layer::Dense(init::glorot_dense(5, 3, Activation::None, &mut rng)),
        ]);
        let batch = Value::Mat(Matrix::from_fn(9, 4, |_, _| rng.normal()));
        let labels: Vec<usize> = (0..9).map(|_| rng.below(3)).collect();
        let logits = net.forward(batch.clone())?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let analytic = net.backward(&dlogits)?;
        // The finite-difference pass re-runs forward, which re-normalizes
        // with fresh batch statistics each time; with stop-gradient
        // statistics the parameter gradients of *upstream* layers treat the
        // statistics as constants, so only compare downstream-of-norm
        // layers there.
        let fd = fd_gradients(&net, &batch, &labels, delta)?;
        let err = if stop_grad {
            let analytic_tail = crate::nn::network::GradientBundle {
                layers: analytic.layers[1..].to_vec(),
            };
            let fd_tail = crate::nn::network::GradientBundle {
                layers: fd.layers[1..].to_vec(),
            };
            max_relative_gradient_error(&analytic_tail, &fd_tail)
        } else {
            max_relative_gradient_error(&analytic, &fd)
        };
        rec.record(&format!("{label}_max_rel_err"), err);
        rec.require(err <= tol.gradient_fd_rel);
    }

    // One-convolution-layer network.
    {
        let mut rng = Rng::new(Rng::derive_seed(seed, "grad-conv"));
        let mut net = Network::new(vec![
            Layer::Conv2d(init::glorot_conv(3, 2, 3, Activation::Relu, &mut rng)),
            Layer::Flatten(None),
            Layer::Dense(init::glorot_dense(5 * 4 * 3, 3, Activation::None, &mut rng)),
        ]);
        let batch = Value::Img(Tensor4::from_fn(4, 5, 4, 2, |_, _, _, _| rng.normal()));
        let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
        let logits = net.forward(batch.clone())?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let analytic = net.backward(&dlogits)?;
        let fd = fd_gradients(&net, &batch, &labels, delta)?;
        let err = max_relative_gradient_error(&analytic, &fd);
        rec.record("conv_max_rel_err", err);
        rec.require(err <= tol.gradient_fd_rel);
    }
    Ok(rec)
}

/// In-place dense preconditioning vs the explicit `(1/q^2) U D^2 U^T g`
/// product across random shapes, including single-example batches.
pub fn check_precond_oracle_dense(seed: u64, trials: usize, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("precond_oracle_dense");
    let mut rng = Rng::new(Rng::derive_seed(seed, "oracle-dense"));
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n_in = 1 + rng.below(40);
        let n_out = 1 + rng.below(16);
        let n_batch = 1 + rng.below(64);
        let (eps1, eps2) = if trial % 3 == 0 {
            (0.0, 0.0)
        } else {
            (crate::bnp::DEFAULT_EPS1, crate::bnp::DEFAULT_EPS2)
        };
        let mut state = BnpState::new(LayerShape::Dense { n_in, n_out }, 0.99, eps1, eps2);
        state.mu = (0..n_in).map(|_| 2.0 * rng.normal()).collect();
        state.sigma2 = (0..n_in).map(|_| rng.normal().abs() + 0.05).collect();
        let gw = Matrix::from_fn(n_out, n_in, |_, _| rng.normal());
        let gb: Vec<f64> = (0..n_out).map(|_| rng.normal()).collect();
        let (gw2, gb2) = state.precondition_dense(&gw, &gb, n_batch)?;

        let q2 = state.shape.q_squared(n_batch);
        let m = explicit_ppt_over_q2(&state.mu, &state.stabilized_variance(), q2);
        for i in 0..n_out {
            let mut g = Vec::with_capacity(n_in + 1);
            g.push(gb[i]);
            g.extend_from_slice(gw.row(i));
            let expect = m.matvec(&g)?;
            let mut got = Vec::with_capacity(n_in + 1);
            got.push(gb2[i]);
            got.extend_from_slice(gw2.row(i));
            worst = worst.max(vec_rel_err(&got, &expect));
        }
    }
    rec.record("max_rel_err", worst);
    rec.record("trials", trials as f64);
    rec.require(worst <= tol.precond_oracle_rel);
    Ok(rec)
}

/// In-place convolution preconditioning vs the explicit `(k^2 c + 1)`-dim
/// matrix product with channel statistics expanded across kernel positions.
pub fn check_precond_oracle_conv(seed: u64, trials: usize, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("precond_oracle_conv");
    let mut rng = Rng::new(Rng::derive_seed(seed, "oracle-conv"));
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let k = [1usize, 3, 5][rng.below(3)];
        let c_in = 1 + rng.below(6);
        let c_out = 1 + rng.below(5);
        let r = k + rng.below(6);
        let s = k + rng.below(6);
        let n_batch = 1 + rng.below(16);
        let (eps1, eps2) = if trial % 3 == 0 {
            (0.0, 0.0)
        } else {
            (crate::bnp::DEFAULT_EPS1, crate::bnp::DEFAULT_EPS2)
        };
        let mut state = BnpState::new(
            LayerShape::Conv { k, c_in, c_out, r, s },
            0.99,
            eps1,
            eps2,
        );
        state.mu = (0..c_in).map(|_| 2.0 * rng.normal()).collect();
        state.sigma2 = (0..c_in).map(|_| rng.normal().abs() + 0.05).collect();
        let mut gk = KernelTensor::zeros(k, c_in, c_out);
        for x in gk.data_mut() {
            *x = rng.normal();
        }
        let gb: Vec<f64> = (0..c_out).map(|_| rng.normal()).collect();
        let (gk2, gb2) = state.precondition_conv(&gk, &gb, n_batch)?;

        // Expand the channel statistics across kernel positions in the
        // stacked vector order p*k^2 + j*k + v.
        let sig = state.stabilized_variance();
        let mut mu_exp = Vec::with_capacity(c_in * k * k);
        let mut sig_exp = Vec::with_capacity(c_in * k * k);
        for p in 0..c_in {
            for _ in 0..k * k {
                mu_exp.push(state.mu[p]);
                sig_exp.push(sig[p]);
            }
        }
        let q2 = state.shape.q_squared(n_batch);
        let m = explicit_ppt_over_q2(&mu_exp, &sig_exp, q2);
        for d in 0..c_out {
            let mut g = Vec::with_capacity(c_in * k * k + 1);
            g.push(gb[d]);
            g.extend_from_slice(gk.omega(d));
            let expect = m.matvec(&g)?;
            let mut got = Vec::with_capacity(c_in * k * k + 1);
            got.push(gb2[d]);
            got.extend_from_slice(gk2.omega(d));
            worst = worst.max(vec_rel_err(&got, &expect));
        }
    }
    rec.record("max_rel_err", worst);
    rec.record("trials", trials as f64);
    rec.require(worst <= tol.precond_oracle_rel);
    Ok(rec)
}

/// `(1/q^2) U D^2 U^T` assembled explicitly from the mean vector and the
/// stabilized variances.
fn explicit_ppt_over_q2(mu: &[f64], sigma_tilde2: &[f64], q2: f64) -> Matrix {
    let n1 = mu.len() + 1;
    let mut u = Matrix::identity(n1);
    for (j, &m) in mu.iter().enumerate() {
        u.set(0, j + 1, -m);
    }
    let mut d2 = vec![1.0];
    d2.extend(sigma_tilde2.iter().map(|&v| 1.0 / v));
    let m = u
        .matmul(&Matrix::diag(&d2))
        .and_then(|ud| ud.matmul(&u.transpose()))
        .expect("square shapes");
    m.scale(1.0 / q2)
}

/// Centering never worsens the condition number, and the variance scaling
/// stays within `sqrt(n+1)` of any positive diagonal rescaling.
pub fn check_conditioning_transforms(
    seed: u64,
    instances: usize,
    d0_per_instance: usize,
    n: usize,
    n_batch: usize,
    tol: &Tolerances,
) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("conditioning_transforms");
    let mut rng = Rng::new(Rng::derive_seed(seed, "conditioning"));
    let slack = 1.0 + tol.conditioning_slack;
    let sqrt_n1 = ((n + 1) as f64).sqrt();
    let mut worst_centering = 0.0f64;
    let mut worst_scaling = 0.0f64;
    let mut rank_deficient = 0usize;

    for _ in 0..instances {
        // Random means and scales keep the instances away from the
        // already-centered trivial case.
        let col_mean: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        let col_scale: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.uniform(-1.0, 1.0))).collect();
        let h = Matrix::from_fn(n_batch, n, |_, c| col_mean[c] + col_scale[c] * rng.normal());
        let ext = build_extended(&h);
        let svd_h = svd(ext.matrix())?;
        if svd_h.rank() < n + 1 {
            rank_deficient += 1;
            continue;
        }
        let kappa_h = svd_h.condition_number()?;
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0)?;
        let hu = ext.matrix().matmul(&pre.u_matrix())?;
        let kappa_hu = condition_number(&hu)?;
        worst_centering = worst_centering.max(kappa_hu / kappa_h);

        let g = ext.matrix().matmul(&pre.p_matrix())?;
        let kappa_g = condition_number(&g)?;
        for _ in 0..d0_per_instance {
            let d0: Vec<f64> = (0..=n).map(|_| 10f64.powf(rng.uniform(-2.0, 2.0))).collect();
            let hud0 = hu.matmul(&Matrix::diag(&d0))?;
            let kappa_hud0 = condition_number(&hud0)?;
            worst_scaling = worst_scaling.max(kappa_g / (sqrt_n1 * kappa_hud0));
        }
    }

    // Exactly centered data: U = I, so the condition numbers coincide.
    {
        let base = Matrix::from_fn(n_batch / 2, n, |_, _| rng.normal());
        let h = Matrix::from_fn(n_batch, n, |r, c| {
            let v = base.get(r / 2, c);
            if r % 2 == 0 {
                v
            } else {
                -v
            }
        });
        let ext = build_extended(&h);
        let kappa_h = condition_number(ext.matrix())?;
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0)?;
        let hu = ext.matrix().matmul(&pre.u_matrix())?;
        let kappa_hu = condition_number(&hu)?;
        let gap = (kappa_hu - kappa_h).abs() / kappa_h;
        rec.record("centered_case_rel_gap", gap);
        rec.require(gap <= 1e-10);
    }

    // Badly scaled column: the variance scaling must win decisively.
    {
        let h = Matrix::from_fn(n_batch, n, |_, c| {
            let scale = if c == 0 { 1e3 } else { 1.0 };
            scale * rng.normal() + 0.5
        });
        let ext = build_extended(&h);
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0)?;
        let hu = ext.matrix().matmul(&pre.u_matrix())?;
        let kappa_hu = condition_number(&hu)?;
        let g = ext.matrix().matmul(&pre.p_matrix())?;
        let kappa_g = condition_number(&g)?;
        rec.record("ill_scaled_kappa_hu_over_kappa_g", kappa_hu / kappa_g);
        rec.require(kappa_g * 10.0 <= kappa_hu);
    }

    rec.record("worst_centering_ratio", worst_centering);
    rec.record("worst_scaling_ratio", worst_scaling);
    rec.record("rank_deficient_instances", rank_deficient as f64);
    rec.record("instances", instances as f64);
    rec.require(worst_centering <= slack);
    rec.require(worst_scaling <= slack);
    rec.require(rank_deficient == 0);
    Ok(rec)
}

/// `kappa(Hhat^T S Hhat) <= kappa(Hhat)^2 kappa(S)` for positive diagonal S,
/// with the smallest-nonzero-singular-value convention throughout.
pub fn check_product_condition_bound(
    seed: u64,
    instances: usize,
    tol: &Tolerances,
) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("product_condition_bound");
    let mut rng = Rng::new(Rng::derive_seed(seed, "product-bound"));
    let slack = 1.0 + tol.conditioning_slack;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = 3 + rng.below(24);
        let n_batch = n + 2 + rng.below(48);
        let h = Matrix::from_fn(n_batch, n, |_, _| rng.normal() + 0.3);
        let ext = build_extended(&h);
        let kappa_h = condition_number(ext.matrix())?;
        let s: Vec<f64> = (0..n_batch)
            .map(|_| 10f64.powf(rng.uniform(-2.0, 1.0)))
            .collect();
        let kappa_s = diag_condition(&s);
        let hsh = weighted_gram(ext.matrix(), &s);
        let kappa_hsh = condition_number_psd(&hsh)?;
        worst = worst.max(kappa_hsh / (kappa_h * kappa_h * kappa_s));
    }
    rec.record("worst_bound_ratio", worst);
    rec.record("instances", instances as f64);
    rec.require(worst <= slack);

    // S = I: the product condition number is exactly kappa(Hhat)^2.
    {
        let h = Matrix::from_fn(24, 6, |_, _| rng.normal());
        let ext = build_extended(&h);
        let kappa_h = condition_number(ext.matrix())?;
        let gram = weighted_gram(ext.matrix(), &[1.0; 24]);
        let kappa_gram = condition_number_psd(&gram)?;
        let gap = (kappa_gram - kappa_h * kappa_h).abs() / (kappa_h * kappa_h);
        rec.record("identity_s_rel_gap", gap);
        rec.require(gap <= 1e-8);
    }

    // Orthogonal (identity) Hhat: the product condition number is kappa(S).
    {
        let m = 8;
        let s: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.uniform(-1.0, 1.0))).collect();
        let kappa_s = diag_condition(&s);
        let gram = weighted_gram(&Matrix::identity(m), &s);
        let kappa_gram = condition_number_psd(&gram)?;
        let gap = (kappa_gram - kappa_s).abs() / kappa_s;
        rec.record("orthogonal_h_rel_gap", gap);
        rec.require(gap <= 1e-10);
    }
    Ok(rec)
}

fn diag_condition(s: &[f64]) -> f64 {
    let max = s.iter().fold(0.0f64, |m, &x| m.max(x));
    let min = s.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    max / min
}

/// `A^T diag(s) A` without building the diagonal matrix.
fn weighted_gram(a: &Matrix, s: &[f64]) -> Matrix {
    let w = a.cols();
    let mut out = Matrix::zeros(w, w);
    for (j, &sj) in s.iter().enumerate() {
        let row = a.row(j);
        for p in 0..w {
            let scaled = sj * row[p];
            let out_row = out.row_mut(p);
            for q in 0..w {
                out_row[q] += scaled * row[q];
            }
        }
    }
    out
}

/// Scaled spectral norms of `[e, G]` stay within a fixed factor across
/// widths.
pub fn check_norm_scaling(
    seed: u64,
    widths: &[usize],
    n_batch: usize,
    trials: usize,
    tol: &Tolerances,
) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("norm_scaling");
    let rows = norm_scaling_probe(widths, n_batch, trials, seed)?;
    for row in &rows {
        rec.record(&format!("width_{}_mean", row.width), row.mean_scaled_norm);
    }
    let ratio = norm_probe_ratio(&rows);
    rec.record("max_over_min_ratio", ratio);
    rec.require(ratio <= tol.norm_ratio_max);
    Ok(rec)
}

/// One batch-norm step equals one preconditioned step on the transformed
/// vanilla network.
pub fn check_bn_step_equivalence(seed: u64, trials: usize, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("bn_step_equivalence");
    let mut rng = Rng::new(Rng::derive_seed(seed, "bn-equivalence"));
    let mut worst = 0.0f64;
    let mut executed = 0usize;
    for _ in 0..trials {
        let n_in = 3 + rng.below(6);
        let hidden = 4 + rng.below(8);
        let classes = 2 + rng.below(4);
        let n_batch = 4 + rng.below(28);
        let net = Network::new(vec![
            Layer::Dense(init::glorot_dense(n_in, hidden, Activation::Relu, &mut rng)),
            Layer::Dense(init::glorot_dense(hidden, classes, Activation::None, &mut rng)),
        ]);
        let batch = Matrix::from_fn(n_batch, n_in, |_, _| rng.normal() + 0.2);
        let labels: Vec<usize> = (0..n_batch).map(|_| rng.below(classes)).collect();
        let disc = match bn_step_equivalence(&net, &batch, &labels, 0.1) {
            Ok(d) => d,
            // A dead ReLU column gives zero variance; such draws are outside
            // the equivalence's precondition, so redraw by skipping.
            Err(crate::error::Error::ZeroVarianceColumn { .. }) => continue,
            Err(e) => return Err(e),
        };
        executed += 1;
        worst = worst.max(disc);
    }
    rec.record("max_discrepancy", worst);
    rec.record("executed_trials", executed as f64);
    rec.record("trials", trials as f64);
    rec.require(worst <= tol.equivalence_rel);
    rec.require(executed * 2 >= trials);
    Ok(rec)
}

/// Lowered-matrix products reproduce the direct convolution, including
/// single-example batches, and the hand-written 4x3/3x3 lowering matrix is
/// reproduced entry for entry.
pub fn check_conv_lowering(seed: u64, trials: usize, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("conv_lowering");
    let mut rng = Rng::new(Rng::derive_seed(seed, "conv-lowering"));
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = if trial % 4 == 0 { 1 } else { 1 + rng.below(4) };
        let k = [1usize, 3, 5][rng.below(3)];
        let r = k + rng.below(7);
        let s = k + rng.below(7);
        let c_in = 1 + rng.below(3);
        let c_out = 1 + rng.below(3);
        let x = Tensor4::from_fn(n, r, s, c_in, |_, _, _, _| rng.normal());
        let kernel = KernelTensor::from_fn(k, c_in, c_out, |_, _, _, _| rng.normal());
        let bias: Vec<f64> = (0..c_out).map(|_| rng.normal()).collect();
        let out = crate::nn::conv2d_same(&x, &kernel, &bias);
        let lowered = cnn_lower(&x, k)?;
        for d in 0..c_out {
            let got = lowered.apply_extended(bias[d], kernel.omega(d))?;
            let mut expect = Vec::with_capacity(n * r * s);
            for i in 0..n {
                expect.extend(out.vec_plane(i, d));
            }
            let err = got
                .iter()
                .zip(&expect)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(err);
        }
    }
    rec.record("max_abs_err", worst);
    rec.record("trials", trials as f64);
    rec.require(worst <= tol.lowering_abs);

    let (input, expected) = crate::hessian::lower::worked_lowering_example();
    let lowered = cnn_lower(&input, 3)?;
    let exact = lowered.matrix().max_abs_diff(&expected) == 0.0;
    rec.record("worked_example_exact", if exact { 1.0 } else { 0.0 });
    rec.require(exact);
    Ok(rec)
}

/// Exact window statistics vs per-channel statistics stay within the
/// border-effect bound on the mean, across several feature-map shapes.
pub fn check_conv_stats_bound(seed: u64, batches_per_shape: usize) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("conv_stats_bound");
    let mut rng = Rng::new(Rng::derive_seed(seed, "conv-stats"));
    let shapes: [(usize, usize, usize); 4] = [(9, 9, 3), (12, 10, 3), (9, 9, 5), (15, 7, 3)];
    let mut worst_margin = 0.0f64;
    let mut violations = 0usize;
    let mut worst_var_err = 0.0f64;
    for &(r, s, k) in &shapes {
        for _ in 0..batches_per_shape {
            let n = 1 + rng.below(4);
            let c = 1 + rng.below(3);
            let x = Tensor4::from_fn(n, r, s, c, |_, _, _, _| rng.uniform(-1.5, 1.5));
            let max_abs = x.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let bound = stats_approx_error_bound(k, r, s, max_abs);
            let (mu_e, var_e) = cnn_stats_exact(&x, k)?;
            let (mu_a, var_a) = cnn_stats_approx(&x)?;
            for p in 0..c {
                for pos in 0..k * k {
                    let err = (mu_e[p * k * k + pos] - mu_a[p]).abs();
                    if err > bound {
                        violations += 1;
                    }
                    worst_margin = worst_margin.max(err / bound.max(f64::MIN_POSITIVE));
                    worst_var_err = worst_var_err.max((var_e[p * k * k + pos] - var_a[p]).abs());
                }
            }
        }
    }
    rec.record("worst_error_over_bound", worst_margin);
    rec.record("violations", violations as f64);
    rec.record("worst_variance_abs_err", worst_var_err);
    rec.record("batches", (batches_per_shape * shapes.len()) as f64);
    rec.require(violations == 0);
    Ok(rec)
}

/// Observed contraction of gradient descent on diagonal quadratics matches
/// `(kappa - 1) / (kappa + 1)` at the optimal step size.
pub fn check_gd_rate(kappas: &[f64], tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("gd_rate");
    for &kappa in kappas {
        let probe = quadratic_rate_probe(kappa, 400);
        rec.record(&format!("kappa_{kappa}_expected"), probe.expected_ratio);
        rec.record(&format!("kappa_{kappa}_observed"), probe.observed_ratio);
        let ok = if probe.expected_ratio == 0.0 {
            probe.final_error <= 1e-12
        } else {
            (probe.observed_ratio - probe.expected_ratio).abs()
                <= tol.rate_rel * probe.expected_ratio
        };
        rec.require(ok);
    }
    Ok(rec)
}

/// Congruence order does not matter: `P^T (Hhat^T S Hhat) P` equals
/// `(Hhat P)^T S (Hhat P)`, and `Hhat P` is exactly the normalized batch.
pub fn check_precond_hessian_identity(seed: u64, tol: &Tolerances) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("precond_hessian_identity");
    let mut rng = Rng::new(Rng::derive_seed(seed, "identity"));
    let mut worst = 0.0f64;
    let mut worst_stats = 0.0f64;
    for _ in 0..20 {
        let n = 2 + rng.below(10);
        let n_batch = n + 2 + rng.below(30);
        let h = Matrix::from_fn(n_batch, n, |_, c| 3.0 * rng.normal() + c as f64);
        let ext = build_extended(&h);
        let s: Vec<f64> = (0..n_batch).map(|_| rng.next_f64() * 0.2).collect();
        let pre = Preconditioner::from_batch(&h, 0.0, 0.0)?;
        let hessian = weighted_gram(ext.matrix(), &s);
        let route_a = pre.congruence(&hessian)?;
        let g = ext.matrix().matmul(&pre.p_matrix())?;
        let route_b = weighted_gram(&g, &s);
        worst = worst.max(route_a.max_abs_diff(&route_b) / route_b.max_abs().max(1.0));

        let (mean, var) = column_stats(&g)?;
        for c in 1..g.cols() {
            worst_stats = worst_stats.max(mean[c].abs()).max((var[c] - 1.0).abs());
        }
        for r in 0..g.rows() {
            worst_stats = worst_stats.max((g.get(r, 0) - 1.0).abs());
        }
    }
    rec.record("max_congruence_gap", worst);
    rec.record("max_normalization_gap", worst_stats);
    rec.require(worst <= tol.identity_abs);
    rec.require(worst_stats <= 1e-10);
    Ok(rec)
}

/// The preconditioner never moves or creates stationary points: `P P^T g`
/// vanishes exactly when `g` does.
pub fn check_stationary_invariance(seed: u64) -> Result<CheckRecord> {
    let mut rec = CheckRecord::new("stationary_invariance");
    let mut rng = Rng::new(Rng::derive_seed(seed, "stationary"));
    let mut min_gain = f64::INFINITY;
    let mut ok = true;
    for _ in 0..50 {
        let n = 2 + rng.below(12);
        let mu: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let sigma2: Vec<f64> = (0..n).map(|_| rng.normal().abs() + 0.01).collect();
        let pre = Preconditioner::from_stats(mu, sigma2, 0.0, 0.0)?;
        let p = pre.p_matrix();
        let ppt = p.matmul(&p.transpose())?;
        // Zero maps to zero exactly.
        let zero = ppt.matvec(&vec![0.0; n + 1])?;
        ok &= zero.iter().all(|&x| x == 0.0);
        // Nonzero gradients keep a positive inner product with their
        // preconditioned image (P P^T is positive definite).
        for _ in 0..10 {
            let g: Vec<f64> = (0..=n).map(|_| rng.normal()).collect();
            let pg = ppt.matvec(&g)?;
            let inner: f64 = g.iter().zip(&pg).map(|(a, b)| a * b).sum();
            let g_norm2: f64 = g.iter().map(|x| x * x).sum();
            min_gain = min_gain.min(inner / g_norm2);
        }
    }
    rec.record("min_rayleigh_quotient", min_gain);
    rec.require(ok);
    rec.require(min_gain > 0.0);
    Ok(rec)
}

/// Everything `verify` runs, with per-check seeds derived from the root
/// seed. Sizes here are the defaults; the acceptance suite passes its own.
pub fn run_all_checks(seed: u64, tol: &Tolerances) -> Result<Vec<CheckRecord>> {
    Ok(vec![
        check_hessian_formula(seed, tol)?,
        check_gradients(seed, tol)?,
        check_precond_oracle_dense(seed, 100, tol)?,
        check_precond_oracle_conv(seed, 100, tol)?,
        check_conditioning_transforms(seed, 200, 100, 32, 64, tol)?,
        check_product_condition_bound(seed, 200, tol)?,
        check_norm_scaling(seed, &[16, 64, 256, 1024], 64, 50, tol)?,
        check_bn_step_equivalence(seed, 50, tol)?,
        check_conv_lowering(seed, 50, tol)?,
        check_conv_stats_bound(seed, 25)?,
        check_gd_rate(&[1.0, 10.0, 100.0], tol)?,
        check_precond_hessian_identity(seed, tol)?,
        check_stationary_invariance(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precond_oracles_pass_at_contract_tolerance() {
        let tol = Tolerances::default();
        let rec = check_precond_oracle_dense(11, 30, &tol).unwrap();
        assert!(rec.pass, "{:?}", rec.values);
        let rec = check_precond_oracle_conv(11, 20, &tol).unwrap();
        assert!(rec.pass, "{:?}", rec.values);
    }

    #[test]
    fn tampered_tolerance_fails_and_names_itself() {
        let mut tol = Tolerances::default();
        tol.precond_oracle_rel = 0.0;
        let rec = check_precond_oracle_dense(11, 5, &tol).unwrap();
        assert_eq!(rec.name, "precond_oracle_dense");
        assert!(!rec.pass);
    }

    #[test]
    fn rate_check_obeys_tampering_too() {
        let mut tol = Tolerances::default();
        tol.rate_rel = -1.0;
        let rec = check_gd_rate(&[10.0], &tol).unwrap();
        assert!(!rec.pass);
    }

    #[test]
    fn conditioning_transforms_small_run() {
        let tol = Tolerances::default();
        let rec = check_conditioning_transforms(13, 20, 10, 12, 32, &tol).unwrap();
        assert!(rec.pass, "{:?}", rec.values);
    }

    #[test]
    fn product_bound_small_run() {
        let tol = Tolerances::default();
        let rec = check_product_condition_bound(13, 25, &tol).unwrap();
        assert!(rec.pass, "{:?}", rec.values);
    }

    #[test]
    fn stationary_invariance_holds() {
        let rec = check_stationary_invariance(3).unwrap();
        assert!(rec.pass, "{:?}", rec.values);
    }
}
