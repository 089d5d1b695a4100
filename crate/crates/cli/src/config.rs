// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! TOML run configuration.
//!
//! Every physical quantity carries its unit in the key name. Unset keys are
//! filled from the selected preset, then from built-in defaults. The fully
//! resolved configuration can be written back out (see [`FileConfig`]) and
//! is what run manifests record.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ddsim_core::experiment::{ExperimentConfig, ExperimentError, DEFAULT_REALIZATIONS};
use ddsim_core::fitting::FitModel;
use ddsim_core::noise::{NoiseError, NoiseModel, CALIBRATED_SIGMA_OU, CALIBRATED_SIGMA_STATIC};
use ddsim_core::pulse::{PulseError, PulseMode, PulseSpec};
use ddsim_core::sequence::{InitialState, SequenceError, SequenceKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flip-angle error of the robustness preset.
pub const ROBUSTNESS_FLIP_ERROR: f64 = 0.01;
/// Spread of the flip-angle error across the sample in the robustness preset.
pub const ROBUSTNESS_FLIP_ERROR_SPREAD: f64 = 0.08;

pub const DEFAULT_DURATION_MS: f64 = 500.0;
pub const DEFAULT_DT_MS: f64 = 1.0;
pub const REFERENCE_PULSE_DURATION_US: f64 = 37.5;
pub const DEFAULT_SCAN_TAU_US: [f64; 7] = [100.0, 200.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    /// Dotted key path, e.g. `sequence.tau_us`.
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_us: Option<f64>,
    /// `x` (perpendicular) or `y` (parallel); defaults per sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_error_spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_rad_per_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_static_rad_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ou_rad_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_corr_ms: Option<f64>,
    /// Irreducible decay constant; `inf` turns the envelope off. Resolved
    /// snapshots write `t2_irr_disabled = true` instead, as JSON has no
    /// infinity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_irr_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_irr_disabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_us: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// No noise, ideal pulses.
    Noiseless,
    /// Noise reproducing the reference FID, Hahn-echo and plateau decay
    /// times; ideal pulses.
    Calibrated,
    /// Calibrated noise plus a 1% flip-angle error with an 8% spread across
    /// the sample.
    Robustness,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "noiseless" => Ok(Self::Noiseless),
            "calibrated" => Ok(Self::Calibrated),
            "robustness" => Ok(Self::Robustness),
            other => Err(ConfigError::new(
                "preset",
                format!("unknown preset '{other}' (expected noiseless, calibrated or robustness)"),
            )),
        }
    }
}

/// Preset values in the config file's units.
struct PresetValues {
    sigma_static_rad_per_s: f64,
    sigma_ou_rad_per_s: f64,
    tau_corr_ms: f64,
    /// `None` disables the irreducible envelope.
    t2_irr_ms: Option<f64>,
    seed: u64,
    flip_error: f64,
    flip_error_spread: f64,
}

impl Preset {
    fn values(self) -> PresetValues {
        let calibrated = PresetValues {
            sigma_static_rad_per_s: CALIBRATED_SIGMA_STATIC,
            sigma_ou_rad_per_s: CALIBRATED_SIGMA_OU,
            tau_corr_ms: 100.0,
            t2_irr_ms: Some(276.0),
            seed: NoiseModel::calibrated().seed,
            flip_error: 0.0,
            flip_error_spread: 0.0,
        };
        match self {
            Self::Noiseless => PresetValues {
                sigma_static_rad_per_s: 0.0,
                sigma_ou_rad_per_s: 0.0,
                tau_corr_ms: 1000.0,
                t2_irr_ms: None,
                seed: 0,
                flip_error: 0.0,
                flip_error_spread: 0.0,
            },
            Self::Calibrated => calibrated,
            Self::Robustness => PresetValues {
                flip_error: ROBUSTNESS_FLIP_ERROR,
                flip_error_spread: ROBUSTNESS_FLIP_ERROR_SPREAD,
                ..calibrated
            },
        }
    }
}

/// Scan grid after defaults are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub sequences: Vec<SequenceKind>,
    pub taus: Vec<f64>,
    pub model: FitModel,
}

/// Configuration with every value decided.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub sequence: Option<SequenceKind>,
    pub tau: Option<f64>,
    pub initial_state: Option<InitialState>,
    /// Experiment parameters shared by simulate and scan; `sequence`, `tau`
    /// and `initial_state` are placeholders until filled from the fields
    /// above or by the scan.
    pub base: ExperimentConfig,
    pub scan: ScanPlan,
    pub out_dir: Option<PathBuf>,
    /// Fully populated file configuration that resolves back to `self`.
    pub snapshot: FileConfig,
}

fn parse_field<T: FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::new(field, e.to_string()))
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("must be a positive finite number, got {v}")))
    }
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            ConfigError::new(toml_field(text, &e), message)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Copy with every optional key filled from the preset and defaults,
    /// in file units. Resolving it gives the same result as resolving `self`.
    pub fn filled(&self) -> Result<FileConfig, ConfigError> {
        let preset: Preset = match &self.preset {
            Some(p) => p.parse()?,
            None => Preset::Noiseless,
        };
        let pre = preset.values();
        let (p, n, r, sc) = (&self.pulse, &self.noise, &self.run, &self.scan);
        let disabled = match (n.t2_irr_disabled, n.t2_irr_ms) {
            (Some(true), _) => true,
            (_, Some(ms)) => ms.is_infinite(),
            (_, None) => pre.t2_irr_ms.is_none(),
        };
        Ok(FileConfig {
            preset: None,
            sequence: self.sequence.clone(),
            pulse: PulseSection {
                mode: Some(p.mode.clone().unwrap_or_else(|| PulseMode::Delta.to_string())),
                duration_us: Some(p.duration_us.unwrap_or(REFERENCE_PULSE_DURATION_US)),
                flip_error: Some(p.flip_error.unwrap_or(pre.flip_error)),
                flip_error_spread: Some(p.flip_error_spread.unwrap_or(pre.flip_error_spread)),
                offset_rad_per_s: Some(p.offset_rad_per_s.unwrap_or(0.0)),
            },
            noise: NoiseSection {
                sigma_static_rad_per_s: Some(n.sigma_static_rad_per_s.unwrap_or(pre.sigma_static_rad_per_s)),
                sigma_ou_rad_per_s: Some(n.sigma_ou_rad_per_s.unwrap_or(pre.sigma_ou_rad_per_s)),
                tau_corr_ms: Some(n.tau_corr_ms.unwrap_or(pre.tau_corr_ms)),
                t2_irr_ms: if disabled { None } else { n.t2_irr_ms.or(pre.t2_irr_ms) },
                t2_irr_disabled: Some(disabled),
                seed: Some(n.seed.unwrap_or(pre.seed)),
                dt_ms: Some(n.dt_ms.unwrap_or(DEFAULT_DT_MS)),
            },
            run: RunSection {
                duration_ms: Some(r.duration_ms.unwrap_or(DEFAULT_DURATION_MS)),
                realizations: Some(r.realizations.unwrap_or(DEFAULT_REALIZATIONS)),
            },
            scan: ScanSection {
                sequences: Some(
                    sc.sequences
                        .clone()
                        .unwrap_or_else(|| SequenceKind::DD.iter().map(|k| k.label().to_string()).collect()),
                ),
                tau_us: Some(sc.tau_us.clone().unwrap_or_else(|| DEFAULT_SCAN_TAU_US.to_vec())),
                model: Some(sc.model.clone().unwrap_or_else(|| FitModel::Double.to_string())),
            },
            output: self.output.clone(),
        })
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let filled = self.filled()?;
        // Unit conversions divide exact file values, so a snapshot written in
        // file units resolves to bit-identical SI values.
        let (s, p, n, r, sc) = (&filled.sequence, &filled.pulse, &filled.noise, &filled.run, &filled.scan);
        let sequence = s
            .kind
            .as_deref()
            .map(|k| parse_field::<SequenceKind>("sequence.kind", k))
            .transpose()?;
        let tau = s.tau_us.map(|t| positive("sequence.tau_us", t)).transpose()?.map(|t| t / 1e6);
        let initial_state = s
            .initial_state
            .as_deref()
            .map(|v| parse_field::<InitialState>("sequence.initial_state", v))
            .transpose()?;

        let mode = parse_field::<PulseMode>("pulse.mode", p.mode.as_deref().unwrap_or_default())?;
        let duration_us = p.duration_us.unwrap_or_default();
        if !(duration_us >= 0.0 && duration_us.is_finite()) {
            return Err(ConfigError::new("pulse.duration_us", format!("must be >= 0, got {duration_us}")));
        }
        if mode == PulseMode::Finite && duration_us == 0.0 {
            return Err(ConfigError::new("pulse.duration_us", "finite pulses need a positive duration"));
        }
        let pulse = PulseSpec {
            duration: duration_us / 1e6,
            flip_error: p.flip_error.unwrap_or_default(),
            offset: p.offset_rad_per_s.unwrap_or_default(),
            ..PulseSpec::default()
        };
        let flip_error_spread = p.flip_error_spread.unwrap_or_default();

        let t2_irr = match n.t2_irr_ms {
            Some(ms) if n.t2_irr_disabled != Some(true) => ms / 1e3,
            _ => f64::INFINITY,
        };
        let noise = NoiseModel {
            sigma_static: n.sigma_static_rad_per_s.unwrap_or_default(),
            sigma_ou: n.sigma_ou_rad_per_s.unwrap_or_default(),
            tau_corr: n.tau_corr_ms.unwrap_or_default() / 1e3,
            t2_irr,
            seed: n.seed.unwrap_or_default(),
        };
        noise.validate().map_err(noise_error)?;
        let dt = positive("noise.dt_ms", n.dt_ms.unwrap_or_default())? / 1e3;
        let duration = positive("run.duration_ms", r.duration_ms.unwrap_or_default())? / 1e3;
        let realizations = r.realizations.unwrap_or_default();

        let names = sc.sequences.clone().unwrap_or_default();
        if names.is_empty() {
            return Err(ConfigError::new("scan.sequences", "must not be empty"));
        }
        let sequences = names
            .iter()
            .map(|k| parse_field::<SequenceKind>("scan.sequences", k))
            .collect::<Result<Vec<_>, _>>()?;
        let taus = sc
            .tau_us
            .clone()
            .unwrap_or_default()
            .into_iter()
            .map(|t| positive("scan.tau_us", t).map(|t| t / 1e6))
            .collect::<Result<Vec<_>, _>>()?;
        if taus.is_empty() {
            return Err(ConfigError::new("scan.tau_us", "must not be empty"));
        }
        let model = parse_field::<FitModel>("scan.model", sc.model.as_deref().unwrap_or_default())?;

        let placeholder = sequence.unwrap_or(SequenceKind::Cpmg);
        let base = ExperimentConfig {
            sequence: placeholder,
            tau: tau.unwrap_or(taus[0]),
            pulse,
            flip_error_spread,
            mode,
            noise,
            duration,
            realizations,
            initial_state: initial_state.unwrap_or(placeholder.default_initial_state()),
            dt,
        };
        Ok(Resolved {
            sequence,
            tau,
            initial_state,
            base,
            scan: ScanPlan { sequences, taus, model },
            out_dir: filled.output.dir.as_ref().map(PathBuf::from),
            snapshot: filled,
        })
    }
}

impl Resolved {
    /// Experiment for `simulate`; needs a sequence and τ.
    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let sequence = self
            .sequence
            .ok_or_else(|| ConfigError::new("sequence.kind", "required for simulate"))?;
        let tau = self.tau.ok_or_else(|| ConfigError::new("sequence.tau_us", "required for simulate"))?;
        let cfg = ExperimentConfig {
            sequence,
            tau,
            initial_state: self.initial_state.unwrap_or(sequence.default_initial_state()),
            ..self.base.clone()
        };
        cfg.validate().map_err(experiment_error)?;
        Ok(cfg)
    }

    /// Checks the scan grid against the experiment constraints.
    pub fn validate_scan(&self) -> Result<(), ConfigError> {
        for &kind in &self.scan.sequences {
            for &tau in &self.scan.taus {
                let cfg = ExperimentConfig {
                    sequence: kind,
                    tau,
                    ..self.base.clone()
                };
                cfg.validate().map_err(|e| match experiment_error(e) {
                    ConfigError { field, message } if field == "sequence.tau_us" => {
                        ConfigError::new("scan.tau_us", message)
                    }
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}

fn noise_error(e: NoiseError) -> ConfigError {
    match e {
        NoiseError::InvalidParameter { field, reason } => {
            let key = match field {
                "sigma_static" => "noise.sigma_static_rad_per_s",
                "sigma_ou" => "noise.sigma_ou_rad_per_s",
                "tau_corr" => "noise.tau_corr_ms",
                "t2_irr" => "noise.t2_irr_ms",
                other => other,
            };
            ConfigError::new(key, reason)
        }
        other => ConfigError::new("noise", other.to_string()),
    }
}

/// Maps a validation failure of the core experiment onto a config key.
pub fn experiment_error(e: ExperimentError) -> ConfigError {
    match e {
        ExperimentError::InvalidConfig { field, reason } => {
            let key = match field {
                "realizations" => "run.realizations",
                "duration" => "run.duration_ms",
                "tau" => "sequence.tau_us",
                "dt" => "noise.dt_ms",
                "flip_error" => "pulse.flip_error",
                "flip_error_spread" => "pulse.flip_error_spread",
                other => other,
            };
            ConfigError::new(key, reason)
        }
        ExperimentError::Noise(n) => noise_error(n),
        ExperimentError::Sequence(SequenceError::NegativeDelay(t)) => {
            ConfigError::new("sequence.tau_us", format!("must be >= 0, got {}", t * 1e6))
        }
        ExperimentError::Sequence(SequenceError::Pulse(p)) | ExperimentError::Pulse(p) => match p {
            PulseError::NonPositiveDuration(_) => ConfigError::new("pulse.duration_us", p.to_string()),
            PulseError::UnknownMode(_) => ConfigError::new("pulse.mode", p.to_string()),
        },
        other => ConfigError::new("config", other.to_string()),
    }
}

/// Best-effort dotted key path for a TOML deserialization error.
fn toml_field(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    // "unknown field `foo`, expected ..." carries the key itself.
    let key = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field"))
        .map(str::to_string);
    let Some(span) = e.span() else {
        return key.unwrap_or_else(|| "config".into());
    };
    let before = &text[..span.start.min(text.len())];
    let section = before
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            (l.starts_with('[') && l.ends_with(']')).then(|| l.trim_matches(|c| c == '[' || c == ']').to_string())
        });
    // The span may point at the key or at its value; use the whole line.
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line_key = text[line_start..]
        .lines()
        .next()
        .filter(|l| l.contains('='))
        .and_then(|l| l.split('=').next())
        .map(|k| k.trim().to_string())
        .filter(|k| !k.is_empty() && !k.starts_with('['));
    let leaf = key.or(line_key);
    match (section, leaf) {
        (Some(s), Some(k)) => format!("{s}.{k}"),
        (None, Some(k)) => k,
        (Some(s), None) => s,
        (None, None) => "config".into(),
    }
}
