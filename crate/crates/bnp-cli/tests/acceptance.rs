//! Acceptance suite: every contract criterion at its stated tolerance.
//! One test per criterion; the harness line doubles as the pass/fail
//! record, and each test prints its measured values (visible with
//! `cargo test -p bnp-cli --test acceptance -- --nocapture`).
//!
//! The training criteria need the MNIST IDX files under `<workspace>/data/
//! mnist/` (override with BNP_DATA_DIR); see the README for how to fetch
//! them.

use bnp_cli::config::{ArchKind, DatasetKind, MethodKind, RunConfig};
use bnp_cli::train::{run_training, TrainArtifacts};
use bnp_cli::{cond_trace, norm_probe, verify};
use bnp_core::hessian::checks::{self, Tolerances};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

/// Root seed for the whole suite.
const SEED: u64 = 11;

fn tolerances() -> Tolerances {
    Tolerances::default()
}

fn data_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("BNP_DATA_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn require_mnist() -> PathBuf {
    let dir = data_dir();
    let probe = dir.join("mnist/train-images-idx3-ubyte");
    assert!(
        probe.exists(),
        "MNIST IDX files not found at {} — place the four decompressed \
         train/t10k files under <data>/mnist/ or set BNP_DATA_DIR \
         (see README)",
        probe.display()
    );
    dir
}

fn mnist_config(method: MethodKind) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset = DatasetKind::Mnist;
    cfg.arch = ArchKind::Mlp3x100;
    cfg.method = method;
    cfg.batch_size = 60;
    cfg.epochs = 10;
    cfg.seed = SEED;
    cfg.subset_train = 10_000;
    // Evaluate on the full test set: scoring 10k instead of 2k held-out
    // digits costs nothing and halves the binomial noise on the accuracy
    // estimate.
    cfg.subset_test = 10_000;
    cfg.dataset_dir = require_mnist();
    cfg
}

/// The desk-scale BNP training run is shared between criteria 11 and 12.
fn bnp_mnist_run() -> &'static TrainArtifacts {
    static RUN: OnceLock<TrainArtifacts> = OnceLock::new();
    RUN.get_or_init(|| run_training(&mnist_config(MethodKind::Bnp)).expect("training runs"))
}

fn trace_config(scale_decades: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset = DatasetKind::Synth;
    cfg.arch = ArchKind::Mlp2Layer;
    cfg.epochs = 2;
    cfg.batch_size = 60;
    cfg.log_every = 5;
    cfg.seed = SEED;
    cfg.lr = Some(0.01);
    cfg.synth_features = 64;
    cfg.synth_size = 6_000;
    cfg.synth_scale_decades = scale_decades;
    cfg
}

#[test]
fn criterion_01_hessian_formula_matches_finite_differences() {
    let started = Instant::now();
    let rec = checks::check_hessian_formula(SEED, &tolerances()).unwrap();
    let elapsed = started.elapsed();
    assert!(rec.pass, "criterion 01 FAIL: {:?}", rec.values);
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "criterion 01 exceeded the 30 s budget: {elapsed:?}"
    );
    println!(
        "[acceptance] criterion 01 (per-neuron Hessian vs central differences, tol 1e-5): PASS {:?} in {elapsed:?}",
        rec.values
    );
}

#[test]
fn criterion_02_precondition_matches_explicit_transform() {
    let tol = tolerances();
    let dense = checks::check_precond_oracle_dense(SEED, 100, &tol).unwrap();
    assert!(dense.pass, "criterion 02 FAIL (dense): {:?}", dense.values);
    let conv = checks::check_precond_oracle_conv(SEED, 100, &tol).unwrap();
    assert!(conv.pass, "criterion 02 FAIL (conv): {:?}", conv.values);
    println!(
        "[acceptance] criterion 02 (gradient update vs explicit (1/q^2)PP^T, tol 1e-12, 100 shapes each): PASS dense {:?} conv {:?}",
        dense.values, conv.values
    );
}

#[test]
fn criterion_03_centering_and_scaling_inequalities() {
    let rec =
        checks::check_conditioning_transforms(SEED, 200, 100, 32, 64, &tolerances()).unwrap();
    assert!(rec.pass, "criterion 03 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 03 (kappa(HU) <= kappa(H); kappa(G) <= sqrt(n+1) kappa(HUD0), 200 instances x 100 diagonals): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_04_product_condition_bound() {
    let rec = checks::check_product_condition_bound(SEED, 200, &tolerances()).unwrap();
    assert!(rec.pass, "criterion 04 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 04 (kappa(H^T S H) <= kappa(H)^2 kappa(S), 200 instances): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_05_bn_step_equivalence() {
    let rec = checks::check_bn_step_equivalence(SEED, 50, &tolerances()).unwrap();
    assert!(rec.pass, "criterion 05 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 05 (one BN step equals one preconditioned step, tol 1e-10, 50 trials): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_06_convolution_lowering() {
    let rec = checks::check_conv_lowering(SEED, 50, &tolerances()).unwrap();
    assert!(rec.pass, "criterion 06 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 06 (lowered matrix reproduces convolution, tol 1e-12, 50 shapes incl. N=1; worked 4x3 example exact): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_07_statistics_approximation_bound() {
    let rec = checks::check_conv_stats_bound(SEED, 25).unwrap();
    assert!(rec.pass, "criterion 07 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 07 (exact vs per-channel statistics within the border bound, 100 batches over 4 shapes): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_08_gd_contraction_rate() {
    let rec = checks::check_gd_rate(&[10.0, 100.0], &tolerances()).unwrap();
    assert!(rec.pass, "criterion 08 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 08 (contraction within 5% of (kappa-1)/(kappa+1) for kappa in {{10, 100}}): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_09_norm_scaling_across_widths() {
    let rec =
        checks::check_norm_scaling(SEED, &[16, 64, 256, 1024], 64, 50, &tolerances()).unwrap();
    assert!(rec.pass, "criterion 09 FAIL: {:?}", rec.values);
    println!(
        "[acceptance] criterion 09 (mean ||(1/q)G_hat||/sqrt(N) max/min ratio <= 3 over widths 16..1024): PASS {:?}",
        rec.values
    );
}

#[test]
fn criterion_10_condition_number_trace() {
    // Live-curvature regime: the preconditioned Hessian must beat the raw
    // one at >= 90% of logged steps.
    let live = cond_trace::run_cond_trace(&trace_config(1.0)).unwrap();
    assert!(
        live.live_rows >= 30,
        "criterion 10 FAIL: only {} live rows",
        live.live_rows
    );
    assert!(
        live.improvement_fraction >= 0.9,
        "criterion 10 FAIL: improvement fraction {}",
        live.improvement_fraction
    );
    // The improvement magnitude is comparable to kappa(D)^2 (within two
    // orders of magnitude, median over live rows).
    let mut ratios: Vec<f64> = live
        .rows
        .iter()
        .filter_map(|r| {
            let t = &r.output_neuron;
            match (t.kappa_hessian, t.kappa_precond_hessian) {
                (Some(kh), Some(kp)) => Some((kh / kp) / (t.kappa_d * t.kappa_d)),
                _ => None,
            }
        })
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = ratios[ratios.len() / 2];
    assert!(
        (0.01..=100.0).contains(&median),
        "criterion 10 FAIL: median improvement/kappa(D)^2 = {median}"
    );

    // Heavy-scaling regime: the first-layer scaling matrix lands in the
    // 1e2..1e5 band on scale_decades=3 data.
    let heavy = cond_trace::run_cond_trace(&trace_config(3.0)).unwrap();
    let (lo, hi) = heavy
        .rows
        .iter()
        .map(|r| r.input_neuron.kappa_d)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), k| (lo.min(k), hi.max(k)));
    assert!(
        lo >= 1e2 && hi <= 1e5,
        "criterion 10 FAIL: first-layer kappa(D) range [{lo}, {hi}] outside [1e2, 1e5]"
    );
    println!(
        "[acceptance] criterion 10 (trace: {:.1}% improvement over {} live steps, median impr/kappa(D)^2 {median:.3}, heavy-scaling kappa(D) in [{lo:.1}, {hi:.1}]): PASS",
        100.0 * live.improvement_fraction,
        live.live_rows
    );
}

#[test]
fn criterion_11_desk_scale_training() {
    // Large-batch runs: preconditioned training reaches 95% and does not
    // trail plain SGD.
    let bnp = bnp_mnist_run();
    let best_bnp = bnp
        .epoch_test_accuracy
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    assert!(
        best_bnp >= 0.95,
        "criterion 11 FAIL: best BNP accuracy {best_bnp} < 0.95"
    );
    let vanilla = run_training(&mnist_config(MethodKind::Vanilla)).unwrap();
    let final_bnp = *bnp.epoch_test_accuracy.last().unwrap();
    let final_vanilla = *vanilla.epoch_test_accuracy.last().unwrap();
    assert!(
        final_bnp >= final_vanilla - 0.005,
        "criterion 11 FAIL: BNP {final_bnp} trails vanilla {final_vanilla} by more than 0.5%"
    );

    // Online setting: both preconditioned and plain SGD reduce the loss
    // over the first 500 single-example steps.
    let mut online_losses = Vec::new();
    for method in [MethodKind::Bnp, MethodKind::Vanilla] {
        let mut cfg = mnist_config(method);
        cfg.batch_size = 1;
        cfg.epochs = 1;
        cfg.subset_train = 500;
        cfg.subset_test = 500;
        cfg.lr = None; // documented per-method online defaults
        let run = run_training(&cfg).unwrap();
        let first = run.step_losses.first().expect("logged windows").1;
        let last = run.step_losses.last().expect("logged windows").1;
        assert!(
            last < first,
            "criterion 11 FAIL: {method} online loss did not decrease ({first} -> {last})"
        );
        online_losses.push((method, first, last));
    }

    // Batch norm refuses to train at batch size 1, with the documented
    // error and a nonzero exit.
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_bnp"))
        .args([
            "train",
            "--dataset",
            "mnist",
            "--method",
            "bn",
            "--batch-size",
            "1",
            "--epochs",
            "1",
            "--out",
            "/tmp/bnp-acceptance-bn1",
            "--dataset-dir",
        ])
        .arg(data_dir())
        .output()
        .expect("binary runs");
    assert!(!out.status.success(), "criterion 11 FAIL: bn at N=1 did not refuse");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("BN undefined at batch size 1"),
        "criterion 11 FAIL: stderr {stderr}"
    );

    println!(
        "[acceptance] criterion 11 (desk-scale training: BNP best {best_bnp:.4}, final {final_bnp:.4} vs vanilla {final_vanilla:.4}; online loss {:?}; BN refused at N=1): PASS",
        online_losses
    );
}

#[test]
fn criterion_12_byte_identical_reruns() {
    // Verification report.
    let tol = tolerances();
    let report_a = verify::report_to_bytes(&verify::build_report(
        SEED,
        checks::run_all_checks(SEED, &tol).unwrap(),
    ));
    let report_b = verify::report_to_bytes(&verify::build_report(
        SEED,
        checks::run_all_checks(SEED, &tol).unwrap(),
    ));
    assert_eq!(report_a, report_b, "criterion 12 FAIL: verify reports differ");

    // Training metrics and checkpoint (fresh rerun of the shared config).
    let first = bnp_mnist_run();
    let again = run_training(&mnist_config(MethodKind::Bnp)).unwrap();
    assert_eq!(
        first.metrics_csv, again.metrics_csv,
        "criterion 12 FAIL: training CSVs differ"
    );
    assert_eq!(
        first.checkpoint, again.checkpoint,
        "criterion 12 FAIL: checkpoints differ"
    );

    // Condition trace.
    let trace_a = cond_trace::run_cond_trace(&trace_config(1.0)).unwrap();
    let trace_b = cond_trace::run_cond_trace(&trace_config(1.0)).unwrap();
    assert_eq!(trace_a.csv, trace_b.csv, "criterion 12 FAIL: traces differ");

    // Norm probe.
    let mut probe_cfg = RunConfig::default();
    probe_cfg.seed = SEED;
    probe_cfg.probe_trials = 10;
    let (probe_a, _) = norm_probe::run_norm_probe(&probe_cfg).unwrap();
    let (probe_b, _) = norm_probe::run_norm_probe(&probe_cfg).unwrap();
    assert_eq!(probe_a, probe_b, "criterion 12 FAIL: norm probes differ");

    println!("[acceptance] criterion 12 (byte-identical reruns of report, training, trace, probe): PASS");
}
