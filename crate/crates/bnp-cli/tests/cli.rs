//! Subcommand-level behavior: trivial configs, refusals, determinism.

use bnp_cli::config::{ArchKind, DatasetKind, MethodKind, RunConfig};
use bnp_cli::train::run_training;
use bnp_core::linalg::Rng;
use std::path::PathBuf;
use std::process::Command;

fn synth_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset = DatasetKind::Synth;
    cfg.arch = ArchKind::Mlp2Layer;
    cfg.method = MethodKind::Bnp;
    cfg.synth_features = 12;
    cfg.synth_size = 300;
    cfg.synth_scale_decades = 1.0;
    cfg.batch_size = 30;
    cfg.epochs = 2;
    cfg.log_every = 4;
    cfg.seed = 5;
    cfg
}

#[test]
fn zero_epochs_writes_header_only_and_init_checkpoint() {
    let mut cfg = synth_config();
    cfg.epochs = 0;
    let artifacts = run_training(&cfg).unwrap();
    let text = String::from_utf8(artifacts.metrics_csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "comment + header only, got: {text}");
    assert!(lines[0].starts_with('#'));
    assert!(lines[1].starts_with("epoch,step,train_loss,test_accuracy"));

    // The checkpoint must equal the untouched initialization.
    let (train, _) = bnp_cli::datasets::load_train_test(&cfg).unwrap();
    let shape = bnp_cli::train::input_shape(&train);
    let mut rng = Rng::new(Rng::derive_seed(cfg.seed, "init"));
    let net = bnp_cli::arch::build_network(&cfg, shape, train.num_classes, &mut rng).unwrap();
    let states = bnp_cli::arch::build_bnp_states(&cfg, &net, shape);
    let mut expect = Vec::new();
    bnp_core::nn::checkpoint::save(&mut expect, &net, Some(&states)).unwrap();
    assert_eq!(artifacts.checkpoint, expect);
}

#[test]
fn zero_learning_rate_keeps_loss_constant_across_epochs() {
    let mut cfg = synth_config();
    cfg.lr = Some(0.0);
    cfg.epochs = 3;
    let artifacts = run_training(&cfg).unwrap();
    let first = artifacts.epoch_train_loss[0];
    for &l in &artifacts.epoch_train_loss {
        assert!((l - first).abs() <= 1e-12 * first.max(1.0), "{l} vs {first}");
    }
}

#[test]
fn checkpoint_roundtrips_through_the_file_format() {
    let cfg = synth_config();
    let artifacts = run_training(&cfg).unwrap();
    let (net, states) =
        bnp_core::nn::checkpoint::load(&mut artifacts.checkpoint.as_slice()).unwrap();
    let mut again = Vec::new();
    bnp_core::nn::checkpoint::save(&mut again, &net, states.as_deref()).unwrap();
    assert_eq!(artifacts.checkpoint, again);
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let cfg = synth_config();
    let a = run_training(&cfg).unwrap();
    let b = run_training(&cfg).unwrap();
    assert_eq!(a.metrics_csv, b.metrics_csv);
    assert_eq!(a.checkpoint, b.checkpoint);
    let mut other = cfg.clone();
    other.seed = 6;
    let c = run_training(&other).unwrap();
    assert_ne!(a.metrics_csv, c.metrics_csv);
}

#[test]
fn bn_method_trains_on_synth() {
    let mut cfg = synth_config();
    cfg.method = MethodKind::Bn;
    let artifacts = run_training(&cfg).unwrap();
    assert_eq!(artifacts.epoch_test_accuracy.len(), 2);
    assert!(artifacts.epoch_train_loss[1].is_finite());
}

#[test]
fn bn_at_batch_size_one_refuses_via_binary() {
    let out = Command::new(env!("CARGO_BIN_EXE_bnp"))
        .args([
            "train",
            "--dataset",
            "synth",
            "--arch",
            "mlp-2layer",
            "--method",
            "bn",
            "--batch-size",
            "1",
            "--out",
            "/tmp/bnp-test-bn1",
        ])
        .output()
        .expect("binary runs");
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("BN undefined at batch size 1"),
        "stderr: {stderr}"
    );
}

#[test]
fn verify_fault_injection_names_the_failing_check() {
    use bnp_core::hessian::checks::{check_norm_scaling, Tolerances};
    let mut tol = Tolerances::default();
    tol.norm_ratio_max = 1.0; // unattainable: the spread is always above 1
    let rec = check_norm_scaling(3, &[8, 64], 32, 5, &tol).unwrap();
    assert!(!rec.pass);
    assert_eq!(rec.name, "norm_scaling");
    // And the report serialization carries the failure.
    let report = bnp_cli::verify::build_report(3, vec![rec]);
    assert!(!report.all_pass);
    let bytes = bnp_cli::verify::report_to_bytes(&report);
    let json: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(json["checks"][0]["name"], "norm_scaling");
    assert_eq!(json["checks"][0]["pass"], false);
}

#[test]
fn norm_probe_is_reproducible() {
    let mut cfg = RunConfig::default();
    cfg.probe_widths = vec![8, 32];
    cfg.probe_trials = 4;
    cfg.probe_batch = 16;
    let (a, ratio_a) = bnp_cli::norm_probe::run_norm_probe(&cfg).unwrap();
    let (b, ratio_b) = bnp_cli::norm_probe::run_norm_probe(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ratio_a.to_bits(), ratio_b.to_bits());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
}

#[test]
fn cond_trace_rejects_wrong_arch_and_dataset() {
    let mut cfg = synth_config();
    cfg.arch = ArchKind::Mlp3x100;
    assert!(bnp_cli::cond_trace::run_cond_trace(&cfg).is_err());
    let mut cfg = synth_config();
    cfg.dataset = DatasetKind::Mnist;
    assert!(bnp_cli::cond_trace::run_cond_trace(&cfg).is_err());
}

#[test]
fn cnn_arch_trains_a_step_with_every_method() {
    // Tiny synthetic image problem: 8x8x3 maps, 3 classes.
    use bnp_core::data::{Dataset, Inputs};
    use bnp_core::nn::tensor::Tensor4;
    let mut rng = Rng::new(12);
    let n = 48;
    let images = Tensor4::from_fn(n, 8, 8, 3, |_, _, _, _| rng.normal() * 0.5 + 0.5);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let ds = Dataset {
        inputs: Inputs::Images(images),
        labels,
        num_classes: 3,
    };
    for method in [MethodKind::Vanilla, MethodKind::Bn, MethodKind::Bnp] {
        let mut cfg = RunConfig::default();
        cfg.dataset = DatasetKind::Synth; // unused by run_training_on
        cfg.arch = ArchKind::Cnn5Layer;
        cfg.method = method;
        cfg.batch_size = 16;
        cfg.epochs = 1;
        cfg.lr = Some(0.01);
        cfg.log_every = 1;
        cfg.seed = 4;
        let run = bnp_cli::train::run_training_on(&cfg, &ds, &ds).unwrap();
        assert!(
            run.epoch_train_loss[0].is_finite(),
            "{method}: non-finite loss"
        );
        assert!(run.epoch_test_accuracy[0] >= 0.2, "{method}: degenerate accuracy");
    }
}

#[test]
fn mnist_files_parse_to_published_shapes_when_present() {
    // Checks against the published corpus: 60000 28x28 training images,
    // first label 5; 10000 test images. Skips quietly when the files are
    // not installed.
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if !dir.join("train-images-idx3-ubyte").exists() {
        eprintln!("mnist files not installed; skipping");
        return;
    }
    let images =
        bnp_core::data::load_idx_images(&dir.join("train-images-idx3-ubyte")).unwrap();
    assert_eq!(images.shape(), (60_000, 28, 28, 1));
    let labels =
        bnp_core::data::load_idx_labels(&dir.join("train-labels-idx1-ubyte")).unwrap();
    assert_eq!(labels.len(), 60_000);
    assert_eq!(labels[0], 5);
    let test_images =
        bnp_core::data::load_idx_images(&dir.join("t10k-images-idx3-ubyte")).unwrap();
    assert_eq!(test_images.batch(), 10_000);
    // Pixels land in [0, 1].
    assert!(images
        .data()
        .iter()
        .take(784 * 100)
        .all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn verify_binary_writes_identical_reports_for_same_seed() {
    for dir in ["/tmp/bnp-test-verify-a", "/tmp/bnp-test-verify-b"] {
        let out = Command::new(env!("CARGO_BIN_EXE_bnp"))
            .args(["verify", "--seed", "3", "--out", dir])
            .output()
            .expect("binary runs");
        assert!(out.status.success(), "verify failed: {:?}", out);
    }
    let a = std::fs::read("/tmp/bnp-test-verify-a/verify_report.json").unwrap();
    let b = std::fs::read("/tmp/bnp-test-verify-b/verify_report.json").unwrap();
    assert_eq!(a, b);
    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(json["all_pass"], true);
    assert_eq!(json["schema"], 1);
}
