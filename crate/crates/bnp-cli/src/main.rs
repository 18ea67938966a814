use bnp_cli::config::RunConfig;
use bnp_cli::{cond_trace, norm_probe, train, verify};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "bnp",
    about = "Train networks with batch-norm preconditioning and verify its conditioning theory numerically"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV/report/checkpoint files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding mnist/ and cifar-10-batches-bin/ data files.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    /// mnist | cifar10 | synth
    #[arg(long)]
    dataset: Option<String>,
    /// mlp-3x100 | cnn-5layer | mlp-2layer
    #[arg(long)]
    arch: Option<String>,
    /// vanilla | bn | bnp
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    /// Precondition with running statistics (true) or the current batch's.
    #[arg(long)]
    use_running_stats: Option<bool>,
    #[arg(long)]
    subset_train: Option<usize>,
    #[arg(long)]
    subset_test: Option<usize>,
    /// Train on the whole dataset instead of the desk-scale subset.
    #[arg(long)]
    full_set: bool,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    synth_features: Option<usize>,
    #[arg(long)]
    synth_scale_decades: Option<f64>,
    #[arg(long)]
    synth_size: Option<usize>,
}

#[derive(Args, Clone)]
struct ProbeOpts {
    /// Comma-separated layer widths.
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    probe_batch: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics.csv plus checkpoint.ckpt.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Run every numerical check and write verify_report.json.
    Verify {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Trace Hessian condition numbers along a training run.
    CondTrace {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Tabulate scaled activation-matrix norms across widths.
    NormProbe {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        probe: ProbeOpts,
    },
}

fn apply_common(cfg: &mut RunConfig, opts: &CommonOpts) -> bnp_core::Result<()> {
    if let Some(path) = &opts.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.out = out.clone();
    }
    if let Some(dir) = &opts.dataset_dir {
        cfg.dataset_dir = dir.clone();
    }
    Ok(())
}

fn apply_train(cfg: &mut RunConfig, opts: &TrainOpts) -> bnp_core::Result<()> {
    if let Some(v) = &opts.dataset {
        cfg.dataset = bnp_cli::config::DatasetKind::parse(v)?;
    }
    if let Some(v) = &opts.arch {
        cfg.arch = bnp_cli::config::ArchKind::parse(v)?;
    }
    if let Some(v) = &opts.method {
        cfg.method = bnp_cli::config::MethodKind::parse(v)?;
    }
    if let Some(v) = opts.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = opts.lr {
        cfg.lr = Some(v);
    }
    if let Some(v) = opts.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = opts.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = opts.rho {
        cfg.rho = v;
    }
    if let Some(v) = opts.eps1 {
        cfg.eps1 = v;
    }
    if let Some(v) = opts.eps2 {
        cfg.eps2 = v;
    }
    if let Some(v) = opts.use_running_stats {
        cfg.use_running_stats = v;
    }
    if let Some(v) = opts.subset_train {
        cfg.subset_train = v;
    }
    if let Some(v) = opts.subset_test {
        cfg.subset_test = v;
    }
    if opts.full_set {
        cfg.full_set = true;
    }
    if let Some(v) = opts.log_every {
        cfg.log_every = v;
    }
    if let Some(v) = opts.synth_features {
        cfg.synth_features = v;
    }
    if let Some(v) = opts.synth_scale_decades {
        cfg.synth_scale_decades = v;
    }
    if let Some(v) = opts.synth_size {
        cfg.synth_size = v;
    }
    Ok(())
}

fn run() -> bnp_core::Result<bool> {
    match Cli::parse().command {
        Command::Train { common, train: t } => {
            let mut cfg = RunConfig::default();
            apply_common(&mut cfg, &common)?;
            apply_train(&mut cfg, &t)?;
            train::cmd_train(&cfg)?;
            Ok(true)
        }
        Command::Verify { common } => {
            let mut cfg = RunConfig::default();
            apply_common(&mut cfg, &common)?;
            verify::cmd_verify(cfg.seed, &cfg.out)
        }
        Command::CondTrace { common, train: t } => {
            let mut cfg = RunConfig::default();
            // Trace defaults: the exploratory two-hidden-layer setup on
            // mildly ill-scaled synthetic data (one decade keeps the
            // softmax from saturating at initialization), logging every 5
            // steps. Pass --synth-scale-decades 3 for the heavy-scaling
            // kappa(D) regime.
            cfg.arch = bnp_cli::config::ArchKind::Mlp2Layer;
            cfg.dataset = bnp_cli::config::DatasetKind::Synth;
            cfg.epochs = 2;
            cfg.log_every = 5;
            cfg.synth_scale_decades = 1.0;
            cfg.lr = Some(0.01);
            apply_common(&mut cfg, &common)?;
            apply_train(&mut cfg, &t)?;
            cond_trace::cmd_cond_trace(&cfg)
        }
        Command::NormProbe { common, probe } => {
            let mut cfg = RunConfig::default();
            apply_common(&mut cfg, &common)?;
            if let Some(widths) = &probe.widths {
                cfg.probe_widths = bnp_cli::config::parse_widths(widths)?;
            }
            if let Some(trials) = probe.trials {
                cfg.probe_trials = trials;
            }
            if let Some(batch) = probe.probe_batch {
                cfg.probe_batch = batch;
            }
            norm_probe::cmd_norm_probe(&cfg)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
