//! The `verify` subcommand: run every analysis check, emit a JSON report,
//! exit nonzero on any failure.

use bnp_core::error::Result;
use bnp_core::hessian::checks::{run_all_checks, CheckRecord, Tolerances};
use serde::Serialize;

#[derive(Serialize)]
pub struct ReportValue {
    pub name: String,
    pub value: f64,
}

#[derive(Serialize)]
pub struct ReportCheck {
    pub name: String,
    pub pass: bool,
    pub values: Vec<ReportValue>,
}

#[derive(Serialize)]
pub struct Report {
    pub schema: u32,
    pub seed: u64,
    pub all_pass: bool,
    pub checks: Vec<ReportCheck>,
}

pub fn build_report(seed: u64, records: Vec<CheckRecord>) -> Report {
    let all_pass = records.iter().all(|r| r.pass);
    Report {
        schema: 1,
        seed,
        all_pass,
        checks: records
            .into_iter()
            .map(|r| ReportCheck {
                name: r.name.to_string(),
                pass: r.pass,
                values: r
                    .values
                    .into_iter()
                    .map(|(name, value)| ReportValue { name, value })
                    .collect(),
            })
            .collect(),
    }
}

pub fn report_to_bytes(report: &Report) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text.into_bytes()
}

/// Runs the full suite. Returns the serialized report and the overall
/// verdict.
pub fn run_verify(seed: u64) -> Result<(Vec<u8>, bool)> {
    let records = run_all_checks(seed, &Tolerances::default())?;
    for r in &records {
        println!(
            "check {}: {}",
            r.name,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    let report = build_report(seed, records);
    Ok((report_to_bytes(&report), report.all_pass))
}

pub fn cmd_verify(seed: u64, out: &std::path::Path) -> Result<bool> {
    let (bytes, all_pass) = run_verify(seed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("verify_report.json");
    std::fs::write(&path, &bytes)?;
    println!(
        "verify: {} (report at {})",
        if all_pass { "ALL CHECKS PASS" } else { "FAILURES PRESENT" },
        path.display()
    );
    Ok(all_pass)
}
