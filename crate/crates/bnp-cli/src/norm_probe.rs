//! The `norm-probe` subcommand: tabulate the scaled spectral norms of
//! random extended activation matrices across layer widths.

use crate::config::RunConfig;
use bnp_core::error::Result;
use bnp_core::hessian::{norm_probe_ratio, norm_scaling_probe};

pub fn run_norm_probe(cfg: &RunConfig) -> Result<(Vec<u8>, f64)> {
    let rows = norm_scaling_probe(
        &cfg.probe_widths,
        cfg.probe_batch,
        cfg.probe_trials,
        cfg.seed,
    )?;
    let mut csv = String::new();
    csv.push_str(&format!(
        "# schema=1 batch={} trials={} seed={}\n",
        cfg.probe_batch, cfg.probe_trials, cfg.seed
    ));
    csv.push_str("width,q,mean_scaled_norm\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{}\n", row.width, row.q, row.mean_scaled_norm));
    }
    Ok((csv.into_bytes(), norm_probe_ratio(&rows)))
}

pub fn cmd_norm_probe(cfg: &RunConfig) -> Result<()> {
    let (csv, ratio) = run_norm_probe(cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("norm_probe.csv"), &csv)?;
    println!("norm-probe: max/min scaled-norm ratio {ratio}");
    Ok(())
}
