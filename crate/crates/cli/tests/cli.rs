// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! End-to-end runs of the `ddsim` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ddsim_cli::RunManifest;
use tempfile::TempDir;

fn ddsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddsim"))
        .current_dir(dir)
        .env_remove("DDSIM_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

const CPMG_CALIBRATED: &str = r#"
preset = "calibrated"
[sequence]
kind = "cpmg"
tau_us = 16000
[run]
realizations = 64
[output]
dir = "out"
"#;

#[test]
fn simulate_writes_one_row_per_cycle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", CPMG_CALIBRATED);
    let o = ddsim(tmp.path(), &["simulate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = tmp.path().join("out/cpmg_tau16000.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("time_s,amplitude,stderr\n"));
    // 0.5 s of 32 ms cycles, plus the t = 0 point.
    let r = rows(&csv);
    assert_eq!(r.len(), 16);
    assert_eq!(r[0][1].parse::<f64>().unwrap(), 1.0);
    assert!(tmp.path().join("out/cpmg_tau16000.manifest.json").exists());
}

#[test]
fn noiseless_perfect_pulses_keep_full_amplitude() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "preset = \"noiseless\"\n[sequence]\nkind = \"xy8s\"\ntau_us = 100\n[run]\nduration_ms = 20\n",
    );
    let o = ddsim(tmp.path(), &["--out-dir", "o", "simulate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in rows(&tmp.path().join("o/xy8s_tau100.csv")) {
        let a: f64 = r[1].parse().unwrap();
        assert!((a - 1.0).abs() < 1e-12, "{a}");
    }
}

#[test]
fn invalid_config_exits_2_and_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("[sequence]\nkind = \"zigzag\"\ntau_us = 100\n", "sequence.kind"),
        ("[sequence]\nkind = \"cpmg\"\ntau_us = -5\n", "sequence.tau_us"),
        ("[sequence]\nkind = \"cpmg\"\ntau_us = 100\n[run]\nrealizations = 0\n", "run.realizations"),
        ("[sequence]\nkind = \"cpmg\"\ntau_us = 100\n[nosie]\nseed = 1\n", "nosie"),
    ];
    for (text, field) in cases {
        let cfg = write(tmp.path(), "bad.toml", text);
        let o = ddsim(tmp.path(), &["simulate", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{field} not in {}", stderr(&o));
    }
    assert!(!tmp.path().join("ddsim-out").exists());
}

#[test]
fn missing_input_file_exits_1() {
    let tmp = TempDir::new().unwrap();
    let o = ddsim(tmp.path(), &["fit", "absent.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_and_unknown_flags() {
    let tmp = TempDir::new().unwrap();
    let o = ddsim(tmp.path(), &["--help"]);
    assert!(o.status.success());
    for cmd in ["simulate", "scan", "aht-verify", "fit", "rerun"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
    let o = ddsim(tmp.path(), &["simulate", "--bogus", "x.toml"]);
    assert!(!o.status.success());
}

#[test]
fn scan_reports_every_row_and_isolates_failures() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "s.toml",
        r#"
preset = "robustness"
[run]
realizations = 32
duration_ms = 500
[scan]
sequences = ["cp", "cpmg", "xy4s", "kddx"]
tau_us = [100, 20000]
model = "double"
"#,
    );
    let o = ddsim(tmp.path(), &["--out-dir", "s", "scan", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&tmp.path().join("s/scan.csv"));
    assert_eq!(r.len(), 8);
    // KDD at 20 ms has a 400 ms cycle: two echoes are too few to fit.
    let kdd = r.iter().find(|x| x[0] == "kddx" && x[1].parse::<f64>().unwrap() > 0.01).unwrap();
    assert_eq!(kdd[2], "failed");
    assert!(r.iter().any(|x| x[2] != "failed"));
    assert!(stdout(&o).contains("8 rows"));
}

#[test]
fn aht_verify_table_csv_and_strict_exit() {
    let tmp = TempDir::new().unwrap();
    let o = ddsim(tmp.path(), &["--out-dir", "a", "aht-verify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("rows within tolerance"));
    let r = rows(&tmp.path().join("a/aht_verify.csv"));
    assert_eq!(r.len(), 10);
    let cpmg = r.iter().find(|x| x[0] == "cpmg" && x[1] == "0").unwrap();
    assert_eq!(cpmg[8], "PASS");

    let failing = r.iter().filter(|x| x[8] == "FAIL").count();
    let o = ddsim(tmp.path(), &["--out-dir", "a", "aht-verify", "--strict"]);
    assert_eq!(o.status.code(), Some(if failing > 0 { 3 } else { 0 }));

    let o = ddsim(tmp.path(), &["aht-verify", "--eps", "0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps"));
}

#[test]
fn rerun_is_bit_identical_and_thread_independent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "preset = \"robustness\"\n[sequence]\nkind = \"xy4s\"\ntau_us = 500\n[run]\nrealizations = 150\nduration_ms = 50\n",
    );
    let o = ddsim(tmp.path(), &["--threads", "1", "--out-dir", "one", "simulate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ddsim(tmp.path(), &["--threads", "3", "--out-dir", "three", "simulate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(tmp.path().join("one/xy4s_tau500.csv")).unwrap();
    let b = fs::read(tmp.path().join("three/xy4s_tau500.csv")).unwrap();
    assert_eq!(a, b);

    let manifest = tmp.path().join("one/xy4s_tau500.manifest.json");
    let m = RunManifest::load(&manifest).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.outputs.len(), 1);
    let o = ddsim(tmp.path(), &["rerun", manifest.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("bit-identically"));

    // A tampered output is caught.
    let csv = tmp.path().join("one/xy4s_tau500.csv");
    let m2 = RunManifest {
        outputs: m
            .outputs
            .iter()
            .map(|r| ddsim_cli::output::OutputRecord {
                sha256: "0".repeat(64),
                ..r.clone()
            })
            .collect(),
        ..m
    };
    let fake = tmp.path().join("fake.manifest.json");
    fs::write(&fake, serde_json::to_vec(&m2).unwrap()).unwrap();
    let o = ddsim(tmp.path(), &["--out-dir", "one", "rerun", fake.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(csv.exists());
}

#[test]
fn environment_sets_output_directory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "[sequence]\nkind = \"cpmg\"\ntau_us = 1000\n[run]\nduration_ms = 10\n[output]\ndir = \"from-config\"\n",
    );
    let o = Command::new(env!("CARGO_BIN_EXE_ddsim"))
        .current_dir(tmp.path())
        .env("DDSIM_OUT_DIR", "from-env")
        .args(["simulate", &cfg])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("from-env/cpmg_tau1000.csv").exists());
    assert!(!tmp.path().join("from-config").exists());

    let o = ddsim(tmp.path(), &["simulate", &cfg]);
    assert!(o.status.success());
    assert!(tmp.path().join("from-config/cpmg_tau1000.csv").exists());
}

#[test]
fn fit_recovers_a_written_decay() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("time_s,amplitude\n");
    for i in 0..40 {
        let t = i as f64 * 0.01;
        let y = 0.3 * (-t / 0.02).exp() + 0.7 * (-t / 0.25).exp();
        text += &format!("{t},{y}\n");
    }
    let csv = write(tmp.path(), "d.csv", &text);
    let o = ddsim(tmp.path(), &["fit", &csv]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let f: Vec<&str> = line.split(',').collect();
    assert_eq!(f[0], "double");
    let (t2f, t2s): (f64, f64) = (f[2].parse().unwrap(), f[4].parse().unwrap());
    assert!((t2f / 0.02 - 1.0).abs() < 1e-4 && (t2s / 0.25 - 1.0).abs() < 1e-4, "{line}");

    let o = ddsim(tmp.path(), &["fit", &csv, "--model", "single"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("single,"));
}
