// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Subcommand implementations. Each returns the text to print; files go
//! through [`OutputSet`] and end with a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ddsim_core::experiment::{echo_file_name, run_ensemble};
use ddsim_core::fitting::{decay_vs_tau_scan, fit, FitModel};
use serde::{Deserialize, Serialize};

use crate::config::{experiment_error, ConfigError, FileConfig, Resolved};
use crate::error::CliError;
use crate::output::{echo_csv, read_echo_csv, scan_csv, OutputSet, RunManifest};
use crate::verify::verify;

pub const DEFAULT_OUT_DIR: &str = "ddsim-out";
pub const SCAN_FILE: &str = "scan.csv";
pub const AHT_FILE: &str = "aht_verify.csv";

/// Output directory: explicit override (flag or environment), then the
/// config file, then the default.
pub fn output_dir(override_dir: Option<&Path>, resolved: Option<&Resolved>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| resolved.and_then(|r| r.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// What a command produced.
pub struct Outcome {
    pub summary: String,
    pub manifest: Option<(PathBuf, RunManifest)>,
    /// Set when the command ran but its checks did not all pass.
    pub failed_checks: usize,
}

fn manifest_config(cfg: &FileConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

pub fn simulate(config: &FileConfig, out_override: Option<&Path>) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let resolved = config.resolve()?;
    let exp = resolved.experiment()?;
    let series = run_ensemble(&exp).map_err(|e| match e {
        e @ ddsim_core::experiment::ExperimentError::InvalidConfig { .. } => CliError::Config(experiment_error(e)),
        other => CliError::Numerical(other.to_string()),
    })?;
    let mut out = OutputSet::new(output_dir(out_override, Some(&resolved)));
    let name = echo_file_name(exp.sequence, exp.tau);
    let path = out.write(&name, &echo_csv(&series))?;
    let manifest_name = name.replace(".csv", ".manifest.json");
    let manifest = out.finish(
        &manifest_name,
        "simulate",
        manifest_config(&resolved.snapshot),
        Some(exp.noise.seed),
        start.elapsed().as_secs_f64(),
    )?;
    let last = series.len() - 1;
    let summary = format!(
        "{} tau={} s: {} echoes over {} s, N={}, final amplitude {:.6} ± {:.2e}\nwrote {}\n",
        exp.sequence,
        exp.tau,
        series.len(),
        series.times[last],
        exp.realizations,
        series.amplitudes[last],
        series.std_errors[last],
        path.display()
    );
    Ok(Outcome {
        summary,
        manifest: Some(manifest),
        failed_checks: 0,
    })
}

pub fn scan(config: &FileConfig, out_override: Option<&Path>) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let resolved = config.resolve()?;
    resolved.validate_scan()?;
    let plan = &resolved.scan;
    let rows = decay_vs_tau_scan(&resolved.base, &plan.sequences, &plan.taus, plan.model);
    let mut out = OutputSet::new(output_dir(out_override, Some(&resolved)));
    let path = out.write(SCAN_FILE, &scan_csv(&rows))?;
    let manifest = out.finish(
        "scan.manifest.json",
        "scan",
        manifest_config(&resolved.snapshot),
        Some(resolved.base.noise.seed),
        start.elapsed().as_secs_f64(),
    )?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{:<7} {:>10} {:>8} {:>10} {:>10} {:>8} {:>10}  note",
        "seq", "tau_us", "model", "T2f_ms", "T2s_ms", "a", "b"
    );
    let mut flagged = 0;
    for r in &rows {
        match &r.fit {
            Ok(f) => {
                let mut note = String::new();
                if f.fallback {
                    note.push_str("fallback ");
                }
                if !f.converged {
                    note.push_str("not-converged");
                    flagged += 1;
                }
                let _ = writeln!(
                    summary,
                    "{:<7} {:>10.1} {:>8} {:>10.3} {:>10.3} {:>8.4} {:>10.4}  {}",
                    r.sequence.label(),
                    r.tau * 1e6,
                    f.model,
                    f.t2_fast * 1e3,
                    f.t2_slow * 1e3,
                    f.a,
                    f.b,
                    note.trim_end()
                );
            }
            Err(e) => {
                flagged += 1;
                let _ = writeln!(summary, "{:<7} {:>10.1} failed: {e}", r.sequence.label(), r.tau * 1e6);
            }
        }
    }
    let _ = writeln!(summary, "{} rows, {} flagged\nwrote {}", rows.len(), flagged, path.display());
    Ok(Outcome {
        summary,
        manifest: Some(manifest),
        failed_checks: 0,
    })
}

/// Parameters of `aht-verify`, as recorded in its manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AhtArgs {
    pub eps: f64,
    pub tau_us: f64,
}

pub fn aht_verify(args: AhtArgs, out_override: Option<&Path>) -> Result<Outcome, CliError> {
    let start = Instant::now();
    if !(args.eps > 0.0 && args.eps < 0.05) {
        return Err(ConfigError::new("eps", format!("must be in (0, 0.05), got {}", args.eps)).into());
    }
    if !(args.tau_us > 0.0 && args.tau_us.is_finite()) {
        return Err(ConfigError::new("tau_us", format!("must be positive, got {}", args.tau_us)).into());
    }
    let rows = verify(args.eps, args.tau_us / 1e6).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<6} {:>5} {:>4} {:>14} {:>14} {:>14} {:>11} {:>9}  status",
        "seq", "order", "comp", "predicted", "magnus", "expansion", "deviation", "tol"
    );
    let mut csv_rows = Vec::new();
    let mut failed = 0;
    for r in &rows {
        let e = &r.expected;
        let status = if r.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!r.pass);
        let _ = writeln!(
            text,
            "{:<6} {:>5} {:>4} {:>14.8} {:>14.8} {:>14.8} {:>11.3e} {:>9.1e}  {}",
            e.sequence.label(),
            e.order,
            e.component.label(),
            e.coefficient,
            r.magnus,
            r.expansion,
            r.deviation,
            e.tolerance,
            status
        );
        csv_rows.push(vec![
            e.sequence.label().to_string(),
            e.order.to_string(),
            e.component.label().to_string(),
            e.coefficient.to_string(),
            r.magnus.to_string(),
            r.expansion.to_string(),
            r.deviation.to_string(),
            e.tolerance.to_string(),
            status.to_string(),
        ]);
    }
    let _ = writeln!(
        text,
        "coefficients in units of eps^(order+1)/tau (zero rows: |H| in units of pi/tau at eps={})",
        args.eps
    );
    let _ = writeln!(text, "{} of {} rows within tolerance", rows.len() - failed, rows.len());

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sequence",
        "order",
        "component",
        "predicted",
        "magnus",
        "expansion",
        "deviation",
        "tolerance",
        "status",
    ])
    .expect("writing to memory");
    for r in csv_rows {
        w.write_record(&r).expect("writing to memory");
    }
    let bytes = w.into_inner().expect("writing to memory");
    let mut out = OutputSet::new(output_dir(out_override, None));
    let path = out.write(AHT_FILE, &bytes)?;
    let manifest = out.finish(
        "aht_verify.manifest.json",
        "aht-verify",
        serde_json::to_value(args).expect("args serialize"),
        None,
        start.elapsed().as_secs_f64(),
    )?;
    let _ = writeln!(text, "wrote {}", path.display());
    Ok(Outcome {
        summary: text,
        manifest: Some(manifest),
        failed_checks: failed,
    })
}

/// Fits an existing echo CSV and prints the result in scan-table form.
pub fn fit_csv(path: &Path, model: FitModel) -> Result<Outcome, CliError> {
    let series = read_echo_csv(path)?;
    let f = fit(&series, model).map_err(|e| CliError::Numerical(e.to_string()))?;
    let summary = format!(
        "model,a,T2f_s,b,T2s_s,residual,converged,fallback,excluded_points\n{},{},{},{},{},{},{},{},{}\n",
        f.model, f.a, f.t2_fast, f.b, f.t2_slow, f.residual, f.converged, f.fallback, f.excluded_points
    );
    Ok(Outcome {
        summary,
        manifest: None,
        failed_checks: 0,
    })
}

/// Re-executes the command recorded in a manifest and checks that every
/// output is bit-identical to the recorded one.
pub fn rerun(manifest_path: &Path, out_override: Option<&Path>) -> Result<Outcome, CliError> {
    let old = RunManifest::load(manifest_path)?;
    let dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| manifest_path.parent().map(Path::to_path_buf).unwrap_or_default());
    let bad_config = |e: serde_json::Error| CliError::Input(format!("{}: config: {e}", manifest_path.display()));
    let outcome = match old.command.as_str() {
        "simulate" => simulate(&serde_json::from_value(old.config.clone()).map_err(bad_config)?, Some(&dir))?,
        "scan" => scan(&serde_json::from_value(old.config.clone()).map_err(bad_config)?, Some(&dir))?,
        "aht-verify" => aht_verify(serde_json::from_value(old.config.clone()).map_err(bad_config)?, Some(&dir))?,
        other => return Err(CliError::Input(format!("unknown command '{other}' in manifest"))),
    };
    let (_, new) = outcome.manifest.as_ref().expect("commands with outputs write manifests");
    let mut mismatched = Vec::new();
    for rec in &old.outputs {
        match new.outputs.iter().find(|n| n.path == rec.path) {
            Some(n) if n.sha256 == rec.sha256 => {}
            _ => mismatched.push(rec.path.clone()),
        }
    }
    if !mismatched.is_empty() {
        return Err(CliError::Numerical(format!(
            "rerun differs from the recorded outputs: {}",
            mismatched.join(", ")
        )));
    }
    let summary = format!(
        "{}reproduced {} output(s) bit-identically in {}\n",
        outcome.summary,
        old.outputs.len(),
        dir.display()
    );
    Ok(Outcome { summary, ..outcome })
}
