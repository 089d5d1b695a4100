// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Dynamical decoupling cycles as timed lists of delays and pulses.
//!
//! Conventions:
//! - `τ` is the free-evolution time between the end of one pulse and the start
//!   of the next. With delta pulses it equals the center-to-center spacing.
//! - Symmetric cycles open and close with `τ/2`; asymmetric cycles start with a
//!   pulse and put the full `τ` after every pulse.
//! - CP and CPMG use y pulses. XY4 is `x y x y`, XY8 is XY4 followed by its
//!   mirror image. A KDD block at reference phase φ is five π pulses at
//!   `(π/6, 0, π/2, 0, π/6) + φ`; KDD_x repeats the φ = 0 block four times and
//!   KDD_xy alternates φ = 0 and φ = π/2 blocks.
//! - Hahn is a single y pulse centred in `[0, τ]`; the experiment runner uses
//!   it with a fresh pulse position for each echo time.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pulse::{imperfect_pulse, PulseError, PulseMode, PulseSpec};
use crate::spin::{QubitOperator, QubitState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("unknown sequence '{0}' (expected one of hahn, cp, cpmg, xy4s, xy4a, xy8s, xy8a, kddx, kddxy)")]
    UnknownSequence(String),
    #[error("inter-pulse delay must be finite and >= 0, got {0} s")]
    NegativeDelay(f64),
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SequenceKind {
    Hahn,
    Cp,
    Cpmg,
    Xy4s,
    Xy4a,
    Xy8s,
    Xy8a,
    KddX,
    KddXy,
}

impl SequenceKind {
    pub const ALL: [SequenceKind; 9] = [
        Self::Hahn,
        Self::Cp,
        Self::Cpmg,
        Self::Xy4s,
        Self::Xy4a,
        Self::Xy8s,
        Self::Xy8a,
        Self::KddX,
        Self::KddXy,
    ];

    /// The periodic DD cycles (everything except Hahn).
    pub const DD: [SequenceKind; 8] = [
        Self::Cp,
        Self::Cpmg,
        Self::Xy4s,
        Self::Xy4a,
        Self::Xy8s,
        Self::Xy8a,
        Self::KddX,
        Self::KddXy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Hahn => "hahn",
            Self::Cp => "cp",
            Self::Cpmg => "cpmg",
            Self::Xy4s => "xy4s",
            Self::Xy4a => "xy4a",
            Self::Xy8s => "xy8s",
            Self::Xy8a => "xy8a",
            Self::KddX => "kddx",
            Self::KddXy => "kddxy",
        }
    }

    /// Pulse phases of one cycle, in time order.
    pub fn phases(self) -> Vec<f64> {
        const X: f64 = 0.0;
        const Y: f64 = FRAC_PI_2;
        let kdd = |phi: f64| [FRAC_PI_6 + phi, phi, FRAC_PI_2 + phi, phi, FRAC_PI_6 + phi];
        match self {
            Self::Hahn => vec![Y],
            Self::Cp | Self::Cpmg => vec![Y, Y],
            Self::Xy4s | Self::Xy4a => vec![X, Y, X, Y],
            Self::Xy8s | Self::Xy8a => vec![X, Y, X, Y, Y, X, Y, X],
            Self::KddX => [kdd(X), kdd(X), kdd(X), kdd(X)].concat(),
            Self::KddXy => [kdd(X), kdd(Y), kdd(X), kdd(Y)].concat(),
        }
    }

    pub fn pulses_per_cycle(self) -> usize {
        match self {
            Self::Hahn => 1,
            Self::Cp | Self::Cpmg => 2,
            Self::Xy4s | Self::Xy4a => 4,
            Self::Xy8s | Self::Xy8a => 8,
            Self::KddX | Self::KddXy => 20,
        }
    }

    pub fn is_time_symmetric(self) -> bool {
        !matches!(self, Self::Xy4a | Self::Xy8a)
    }

    /// Preparation used when none is given: CP starts perpendicular to its
    /// pulse axis, everything else parallel (along y).
    pub fn default_initial_state(self) -> InitialState {
        match self {
            Self::Cp => InitialState::Perpendicular,
            _ => InitialState::Parallel,
        }
    }

    /// Preparations whose decay times are averaged in scans: CP and CPMG are
    /// each tied to one preparation; the others use both I_x and I_y.
    pub fn scan_initial_states(self) -> Vec<InitialState> {
        match self {
            Self::Cp => vec![InitialState::Perpendicular],
            Self::Cpmg | Self::Hahn => vec![InitialState::Parallel],
            _ => vec![InitialState::Perpendicular, InitialState::Parallel],
        }
    }
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SequenceKind {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.label() == lower)
            .ok_or_else(|| SequenceError::UnknownSequence(s.to_string()))
    }
}

impl TryFrom<String> for SequenceKind {
    type Error = SequenceError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SequenceKind> for String {
    fn from(k: SequenceKind) -> String {
        k.label().to_string()
    }
}

/// Prepared transverse state relative to the y pulse axis of CP/CPMG:
/// parallel is `|+y⟩` (I_y), perpendicular is `|+x⟩` (I_x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Parallel,
    Perpendicular,
}

impl InitialState {
    pub fn state(self) -> QubitState {
        match self {
            Self::Parallel => QubitState::plus_y(),
            Self::Perpendicular => QubitState::plus_x(),
        }
    }

    /// Spin operator along the prepared direction.
    pub fn observable(self) -> QubitOperator {
        match self {
            Self::Parallel => QubitOperator::sy(),
            Self::Perpendicular => QubitOperator::sx(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Parallel => "y",
            Self::Perpendicular => "x",
        }
    }
}

impl FromStr for InitialState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "y" | "iy" | "parallel" => Ok(Self::Parallel),
            "x" | "ix" | "perpendicular" => Ok(Self::Perpendicular),
            other => Err(format!("unknown initial state '{other}'")),
        }
    }
}

/// Initial state for a sequence and preparation variant.
pub fn initial_state_for(_kind: SequenceKind, variant: InitialState) -> QubitState {
    variant.state()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element {
    Delay(f64),
    Pulse(PulseSpec),
}

impl Element {
    pub fn duration(&self, mode: PulseMode) -> f64 {
        match self {
            Element::Delay(d) => *d,
            Element::Pulse(p) => p.occupied_time(mode),
        }
    }
}

/// One period of a DD sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceCycle {
    pub kind: SequenceKind,
    pub elements: Vec<Element>,
    pub tau: f64,
    pub cycle_time: f64,
    pub mode: PulseMode,
}

impl SequenceCycle {
    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    pub fn time_symmetric(&self) -> bool {
        self.kind.is_time_symmetric()
    }

    pub fn pulses(&self) -> impl Iterator<Item = &PulseSpec> {
        self.elements.iter().filter_map(|e| match e {
            Element::Pulse(p) => Some(p),
            Element::Delay(_) => None,
        })
    }

    pub fn pulse_count(&self) -> usize {
        self.pulses().count()
    }

    /// Sum of element durations; equals `cycle_time` by construction.
    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(|e| e.duration(self.mode)).sum()
    }

    /// Noise-free propagator of one cycle with the pulses' own errors and a
    /// constant detuning `offset` during every element.
    pub fn propagator(&self, offset: f64) -> Result<QubitOperator, SequenceError> {
        let mut u = QubitOperator::identity();
        for e in &self.elements {
            let step = match e {
                Element::Delay(d) => crate::spin::z_rotation(offset * d),
                Element::Pulse(p) => imperfect_pulse(p, offset, self.mode)?,
            };
            u = step * u;
        }
        Ok(u)
    }

    /// Cycle propagator with every pulse made ideal (ε = 0, no offsets).
    pub fn ideal_propagator(&self) -> QubitOperator {
        self.pulses()
            .map(|p| crate::spin::rotation_propagator(p.phase, p.nominal_angle))
            .fold(QubitOperator::identity(), |u, r| r * u)
    }

    /// Same cycle with a different flip-angle error on every pulse.
    pub fn with_flip_error(&self, flip_error: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.elements {
            if let Element::Pulse(p) = e {
                p.flip_error = flip_error;
            }
        }
        out
    }
}

/// Builds one cycle of `kind` with delay parameter `tau`, copying everything
/// except the phase from `template`.
pub fn build_cycle(
    kind: SequenceKind,
    tau: f64,
    template: &PulseSpec,
    mode: PulseMode,
) -> Result<SequenceCycle, SequenceError> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(SequenceError::NegativeDelay(tau));
    }
    if mode == PulseMode::Finite && !(template.duration > 0.0) {
        return Err(PulseError::NonPositiveDuration(template.duration).into());
    }
    let phases = kind.phases();
    let n = phases.len();
    let mut elements = Vec::with_capacity(2 * n + 1);
    if kind.is_time_symmetric() {
        elements.push(Element::Delay(0.5 * tau));
        for (i, &phase) in phases.iter().enumerate() {
            elements.push(Element::Pulse(template.with_phase(phase)));
            let after = if i + 1 == n { 0.5 * tau } else { tau };
            elements.push(Element::Delay(after));
        }
    } else {
        for &phase in &phases {
            elements.push(Element::Pulse(template.with_phase(phase)));
            elements.push(Element::Delay(tau));
        }
    }
    let cycle_time = n as f64 * (tau + template.occupied_time(mode));
    Ok(SequenceCycle {
        kind,
        elements,
        tau,
        cycle_time,
        mode,
    })
}

/// Number of complete cycles that fit in `duration`.
pub fn cycles_for_duration(duration: f64, cycle: &SequenceCycle) -> usize {
    if !(duration > 0.0) || !(cycle.cycle_time > 0.0) {
        return 0;
    }
    // Guard against T/τ_c landing a few ulps below an exact integer.
    (duration / cycle.cycle_time * (1.0 + 4.0 * f64::EPSILON)).floor() as usize
}
