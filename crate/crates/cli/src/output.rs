// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! CSV rendering, atomic file writes and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use ddsim_core::experiment::EchoSeries;
use ddsim_core::fitting::{DecayFit, ScanRow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ECHO_HEADER: [&str; 3] = ["time_s", "amplitude", "stderr"];
pub const SCAN_HEADER: [&str; 9] = ["sequence", "tau_s", "model", "a", "T2f_s", "b", "T2s_s", "residual", "converged"];

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// `time_s,amplitude,stderr`, one row per cycle boundary. Floats use the
/// shortest representation that reads back exactly.
pub fn echo_csv(series: &EchoSeries) -> Vec<u8> {
    csv_bytes(
        &ECHO_HEADER,
        (0..series.len()).map(|i| {
            vec![
                series.times[i].to_string(),
                series.amplitudes[i].to_string(),
                series.std_errors[i].to_string(),
            ]
        }),
    )
}

fn fit_fields(fit: &DecayFit) -> [String; 6] {
    [
        fit.model.to_string(),
        fit.a.to_string(),
        fit.t2_fast.to_string(),
        fit.b.to_string(),
        fit.t2_slow.to_string(),
        fit.residual.to_string(),
    ]
}

/// Scan table; failed rows carry model `failed`, NaN values and
/// `converged = false`.
pub fn scan_csv(rows: &[ScanRow]) -> Vec<u8> {
    csv_bytes(
        &SCAN_HEADER,
        rows.iter().map(|r| {
            let mut out = vec![r.sequence.label().to_string(), r.tau.to_string()];
            match &r.fit {
                Ok(f) => {
                    out.extend(fit_fields(f));
                    out.push(f.converged.to_string());
                }
                Err(_) => {
                    out.push("failed".into());
                    out.extend(std::iter::repeat("NaN".to_string()).take(5));
                    out.push("false".into());
                }
            }
            out
        }),
    )
}

/// Reads an echo CSV written by [`echo_csv`].
pub fn read_echo_csv(path: &Path) -> Result<EchoSeries, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ti), Some(ai)) = (col("time_s"), col("amplitude")) else {
        return Err(CliError::Input(format!(
            "{}: expected columns time_s, amplitude[, stderr]",
            path.display()
        )));
    };
    let si = col("stderr");
    let (mut times, mut amps, mut errs) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(e.to_string()))?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| CliError::Input(format!("{} row {}: {e}", path.display(), line + 2)))
        };
        times.push(num(ti)?);
        amps.push(num(ai)?);
        errs.push(match si {
            Some(i) => num(i)?,
            None => 0.0,
        });
    }
    let mut s = EchoSeries::from_amplitudes(times, amps);
    if errs.iter().any(|&e| e > 0.0) {
        s.std_errors = errs;
        // Enables weighting; the actual ensemble size is not stored.
        s.realizations = 2;
    }
    Ok(s)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to reproduce a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved parameters of the command.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub outputs: Vec<OutputRecord>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

/// Output files of one command, written atomically and recorded for the
/// manifest.
pub struct OutputSet {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl OutputSet {
    pub fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            records: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        self.records.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn records(&self) -> &[OutputRecord] {
        &self.records
    }

    /// Writes `<name>` as the manifest of every file written so far.
    pub fn finish(
        self,
        name: &str,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        wall_clock_s: f64,
    ) -> Result<(PathBuf, RunManifest), CliError> {
        let manifest = RunManifest {
            tool: "ddsim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed,
            outputs: self.records,
            wall_clock_s,
        };
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        atomic_write(&path, text.as_bytes())?;
        Ok((path, manifest))
    }
}
