//! The training loop: vanilla, batch-norm, or preconditioned SGD, with
//! deterministic metrics logging and a checkpoint at the end.

use crate::arch::{build_bnp_states, build_network, InputShape};
use crate::config::{MethodKind, RunConfig};
use crate::datasets::load_train_test;
use bnp_core::bnp::BnpState;
use bnp_core::data::{BatchInputs, BatchIterator, Dataset, Inputs};
use bnp_core::error::Result;
use bnp_core::linalg::Rng;
use bnp_core::nn::{
    accuracy, checkpoint, softmax_cross_entropy, Layer, LayerGrad, Mode, Network, SgdOptimizer,
    Value,
};

pub struct TrainArtifacts {
    pub metrics_csv: Vec<u8>,
    pub checkpoint: Vec<u8>,
    /// Test accuracy after each epoch.
    pub epoch_test_accuracy: Vec<f64>,
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_train_loss: Vec<f64>,
    /// `(cumulative step, mean loss since previous log)` rows.
    pub step_losses: Vec<(usize, f64)>,
}

pub fn input_shape(ds: &Dataset) -> InputShape {
    match &ds.inputs {
        Inputs::Flat(m) => InputShape::Flat(m.cols()),
        Inputs::Images(t) => {
            let (_, r, s, c) = t.shape();
            InputShape::Image { r, s, c }
        }
    }
}

fn batch_value(inputs: BatchInputs) -> Value {
    match inputs {
        BatchInputs::Flat(m) => Value::Mat(m),
        BatchInputs::Images(t) => Value::Img(t),
    }
}

/// Test accuracy in inference mode, evaluated in fixed-size chunks.
fn evaluate(net: &mut Network, ds: &Dataset, flatten: bool) -> Result<f64> {
    net.set_mode(Mode::Infer);
    let chunk = 500usize;
    let mut correct_weighted = 0.0;
    let mut total = 0usize;
    let mut start = 0usize;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let indices: Vec<usize> = (start..end).collect();
        let (inputs, labels) = ds.gather(&indices, flatten);
        let logits = net.forward(batch_value(inputs))?;
        correct_weighted += accuracy(&logits, &labels) * labels.len() as f64;
        total += labels.len();
        start = end;
    }
    net.set_mode(Mode::Train);
    Ok(correct_weighted / total.max(1) as f64)
}

/// kappa(D) of each parameterized layer's current scaling, from the
/// stabilized running variances (leading unit entry included).
fn kappa_d_per_layer(states: &[BnpState]) -> Vec<f64> {
    states
        .iter()
        .map(|st| {
            let d: Vec<f64> = std::iter::once(1.0)
                .chain(st.stabilized_variance().iter().map(|&v| 1.0 / v.sqrt()))
                .collect();
            let max = d.iter().fold(0.0f64, |m, &x| m.max(x));
            let min = d.iter().fold(f64::INFINITY, |m, &x| m.min(x));
            max / min
        })
        .collect()
}

/// Feeds each parameterized layer's cached input into its statistics state.
fn update_states(net: &Network, states: &mut [BnpState]) -> Result<()> {
    let mut si = 0usize;
    for layer in &net.layers {
        match layer {
            Layer::Dense(l) => {
                if let Some(input) = l.cached_input() {
                    states[si].update_stats_dense(input)?;
                }
                si += 1;
            }
            Layer::Conv2d(l) => {
                if let Some(input) = l.cached_input() {
                    states[si].update_stats_conv(input)?;
                }
                si += 1;
            }
            Layer::BatchNorm(_) | Layer::BatchNorm2d(..) | Layer::Flatten(_) => {}
        }
    }
    Ok(())
}

/// Routes the parameter gradients of dense/conv layers through the
/// preconditioner.
fn precondition_gradients(
    net: &Network,
    states: &[BnpState],
    grads: &mut bnp_core::nn::GradientBundle,
    n_batch: usize,
) -> Result<()> {
    let mut si = 0usize;
    for (idx, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Dense(_) => {
                if let LayerGrad::Dense { weights, bias } = &grads.layers[idx] {
                    let (gw, gb) = states[si].precondition_dense(weights, bias, n_batch)?;
                    grads.layers[idx] = LayerGrad::Dense {
                        weights: gw,
                        bias: gb,
                    };
                }
                si += 1;
            }
            Layer::Conv2d(_) => {
                if let LayerGrad::Conv2d { kernel, bias } = &grads.layers[idx] {
                    let (gk, gb) = states[si].precondition_conv(kernel, bias, n_batch)?;
                    grads.layers[idx] = LayerGrad::Conv2d {
                        kernel: gk,
                        bias: gb,
                    };
                }
                si += 1;
            }
            Layer::BatchNorm(_) | Layer::BatchNorm2d(..) | Layer::Flatten(_) => {}
        }
    }
    Ok(())
}

fn csv_push_row(
    csv: &mut String,
    epoch: usize,
    step: usize,
    loss: Option<f64>,
    acc: Option<f64>,
    kappas: Option<&[f64]>,
    n_kappa_cols: usize,
) {
    use std::fmt::Write;
    write!(csv, "{epoch},{step}").expect("string write");
    match loss {
        Some(l) => write!(csv, ",{l}").expect("string write"),
        None => csv.push(','),
    }
    match acc {
        Some(a) => write!(csv, ",{a}").expect("string write"),
        None => csv.push(','),
    }
    match kappas {
        Some(ks) => {
            for k in ks {
                write!(csv, ",{k}").expect("string write");
            }
        }
        None => {
            for _ in 0..n_kappa_cols {
                csv.push(',');
            }
        }
    }
    csv.push('\n');
}

pub fn run_training(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate_for_training()?;
    cfg.validate_dataset_arch()?;
    let (train, test) = load_train_test(cfg)?;
    run_training_on(cfg, &train, &test)
}

/// Training loop on already-loaded data (the verification suite reuses it
/// with synthetic datasets).
pub fn run_training_on(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainArtifacts> {
    cfg.validate_for_training()?;
    let shape = input_shape(train);
    let flatten = !cfg.arch.is_convolutional();
    let lr = cfg.resolved_lr();

    let mut init_rng = Rng::new(Rng::derive_seed(cfg.seed, "init"));
    let mut net = build_network(cfg, shape, train.num_classes, &mut init_rng)?;
    let mut states = build_bnp_states(cfg, &net, shape);
    let mut optimizer = SgdOptimizer::new(lr, cfg.momentum);
    let iterator = BatchIterator::new(train.len(), cfg.batch_size, Rng::derive_seed(cfg.seed, "batches"))?;

    let n_kappa_cols = states.len();
    let mut csv = String::new();
    csv.push_str(&format!(
        "# schema=1 dataset={} arch={} method={} batch_size={} lr={} momentum={} epochs={} seed={}\n",
        cfg.dataset, cfg.arch, cfg.method, cfg.batch_size, lr, cfg.momentum, cfg.epochs, cfg.seed
    ));
    csv.push_str("epoch,step,train_loss,test_accuracy");
    for i in 1..=n_kappa_cols {
        csv.push_str(&format!(",kappa_d_{i}"));
    }
    csv.push('\n');

    let mut artifacts = TrainArtifacts {
        metrics_csv: Vec::new(),
        checkpoint: Vec::new(),
        epoch_test_accuracy: Vec::new(),
        epoch_train_loss: Vec::new(),
        step_losses: Vec::new(),
    };

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut window_loss = 0.0;
        let mut window_batches = 0usize;
        let mut epoch_loss_weighted = 0.0;
        let mut epoch_samples = 0usize;
        for indices in iterator.epoch(epoch) {
            let n_batch = indices.len();
            let (inputs, labels) = train.gather(&indices, flatten);
            let logits = net.forward(batch_value(inputs))?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            let mut grads = net.backward(&dlogits)?;

            update_states(&net, &mut states)?;
            if cfg.method == MethodKind::Bnp {
                precondition_gradients(&net, &states, &mut grads, n_batch)?;
            }
            optimizer.step(&mut net, &grads)?;

            step += 1;
            window_loss += loss;
            window_batches += 1;
            epoch_loss_weighted += loss * n_batch as f64;
            epoch_samples += n_batch;
            if step % cfg.log_every == 0 {
                let mean = window_loss / window_batches as f64;
                csv_push_row(&mut csv, epoch, step, Some(mean), None, None, n_kappa_cols);
                artifacts.step_losses.push((step, mean));
                window_loss = 0.0;
                window_batches = 0;
            }
        }
        let epoch_loss = epoch_loss_weighted / epoch_samples.max(1) as f64;
        let test_acc = evaluate(&mut net, test, flatten)?;
        let kappas = kappa_d_per_layer(&states);
        csv_push_row(
            &mut csv,
            epoch,
            step,
            Some(epoch_loss),
            Some(test_acc),
            Some(&kappas),
            n_kappa_cols,
        );
        artifacts.epoch_train_loss.push(epoch_loss);
        artifacts.epoch_test_accuracy.push(test_acc);
    }

    let mut ckpt = Vec::new();
    checkpoint::save(&mut ckpt, &net, Some(&states))?;
    artifacts.checkpoint = ckpt;
    artifacts.metrics_csv = csv.into_bytes();
    Ok(artifacts)
}

/// Writes `metrics.csv` and `checkpoint.ckpt` under the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let artifacts = run_training(cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("metrics.csv"), &artifacts.metrics_csv)?;
    std::fs::write(cfg.out.join("checkpoint.ckpt"), &artifacts.checkpoint)?;
    if let (Some(acc), Some(loss)) = (
        artifacts.epoch_test_accuracy.last(),
        artifacts.epoch_train_loss.last(),
    ) {
        println!("train: final test accuracy {acc}, final train loss {loss}");
    } else {
        println!("train: 0 epochs, wrote initialization checkpoint");
    }
    Ok(())
}
