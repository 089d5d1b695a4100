// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Imperfect π pulses.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::{rotation_propagator, QubitOperator};

/// Pulse length used in the reference experiment (13.3 kHz nutation).
pub const REFERENCE_PULSE_DURATION: f64 = 37.5e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("finite-duration pulse needs a positive duration, got {0} s")]
    NonPositiveDuration(f64),
    #[error("unknown pulse mode '{0}' (expected 'delta' or 'finite')")]
    UnknownMode(String),
}

/// Whether pulses are instantaneous rotations or act over their duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseMode {
    #[default]
    Delta,
    Finite,
}

impl FromStr for PulseMode {
    type Err = PulseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "delta" => Ok(Self::Delta),
            "finite" => Ok(Self::Finite),
            _ => Err(PulseError::UnknownMode(s.to_string())),
        }
    }
}

impl fmt::Display for PulseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Delta => "delta",
            Self::Finite => "finite",
        })
    }
}

/// One nominal π pulse with its systematic errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Azimuth of the rotation axis in the xy plane (rad).
    pub phase: f64,
    /// Nominal rotation angle (rad).
    pub nominal_angle: f64,
    /// Pulse length `t_p` (s). Zero for delta pulses.
    pub duration: f64,
    /// Fractional flip-angle error ε: the pulse rotates by `(1+ε)·nominal_angle`.
    pub flip_error: f64,
    /// Extra detuning present only while the pulse is on (rad/s).
    pub offset: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self {
            phase: 0.0,
            nominal_angle: PI,
            duration: 0.0,
            flip_error: 0.0,
            offset: 0.0,
        }
    }
}

impl PulseSpec {
    pub fn ideal(phase: f64) -> Self {
        Self {
            phase,
            ..Self::default()
        }
    }

    pub fn with_phase(self, phase: f64) -> Self {
        Self { phase, ..self }
    }

    pub fn with_flip_error(self, flip_error: f64) -> Self {
        Self { flip_error, ..self }
    }

    /// Rotation angle actually produced, `(1+ε)·θ`.
    pub fn actual_angle(&self) -> f64 {
        (1.0 + self.flip_error) * self.nominal_angle
    }

    /// Area of each half-kick when the pulse is split as
    /// `exp(-iH_φ t_p/2)·exp(-iθS_φ)·exp(-iH_φ t_p/2)` with `H_φ = εθ/t_p·S_φ`.
    pub fn half_kick_area(&self) -> f64 {
        0.5 * self.flip_error * self.nominal_angle
    }

    /// Time the pulse occupies in a cycle under the given mode.
    pub fn occupied_time(&self, mode: PulseMode) -> f64 {
        match mode {
            PulseMode::Delta => 0.0,
            PulseMode::Finite => self.duration,
        }
    }
}

/// Propagator of an imperfect pulse.
///
/// In delta mode the pulse is the instantaneous rotation `exp(-i(1+ε)θ S_φ)`
/// and `detuning` is ignored. In finite mode it is
/// `exp(-i((Δω_z + offset) S_z + ω_1 S_φ) t_p)` with `ω_1 = (1+ε)θ/t_p`.
pub fn imperfect_pulse(
    pulse: &PulseSpec,
    detuning: f64,
    mode: PulseMode,
) -> Result<QubitOperator, PulseError> {
    match mode {
        PulseMode::Delta => Ok(rotation_propagator(pulse.phase, pulse.actual_angle())),
        PulseMode::Finite => {
            let tp = pulse.duration;
            if !(tp > 0.0) {
                return Err(PulseError::NonPositiveDuration(tp));
            }
            let w1 = pulse.actual_angle() / tp;
            let h = [
                w1 * pulse.phase.cos(),
                w1 * pulse.phase.sin(),
                detuning + pulse.offset,
            ];
            Ok(QubitOperator::exp_spin(h, tp))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::C64;
    use std::f64::consts::FRAC_PI_2;

    fn assert_same_up_to_phase(a: &QubitOperator, b: &QubitOperator, tol: f64) {
        let overlap = a.phase_insensitive_overlap(b);
        assert!((overlap - 1.0).abs() < tol, "overlap {overlap}: {a:?} vs {b:?}");
    }

    #[test]
    fn error_free_pulse_is_ideal_in_both_modes() {
        let ideal = rotation_propagator(FRAC_PI_2, PI);
        let p = PulseSpec {
            duration: REFERENCE_PULSE_DURATION,
            ..PulseSpec::ideal(FRAC_PI_2)
        };
        for mode in [PulseMode::Delta, PulseMode::Finite] {
            let u = imperfect_pulse(&p, 0.0, mode).unwrap();
            assert!((u - ideal).frobenius_norm() < 1e-12, "{mode}");
        }
    }

    #[test]
    fn flip_error_scales_rotation_angle() {
        let p = PulseSpec::ideal(0.3).with_flip_error(0.02);
        let u = imperfect_pulse(&p, 123.0, PulseMode::Delta).unwrap();
        assert_same_up_to_phase(&u, &rotation_propagator(0.3, 1.02 * PI), 1e-14);
    }

    #[test]
    fn finite_pulse_with_detuning_matches_series_exponential() {
        let p = PulseSpec {
            duration: REFERENCE_PULSE_DURATION,
            ..PulseSpec::ideal(0.0)
        };
        let detuning = 2.0 * PI * 2.0e3;
        let u = imperfect_pulse(&p, detuning, PulseMode::Finite).unwrap();

        // Oracle: Taylor series with scaling and squaring on the full
        // Hamiltonian matrix.
        let w1 = PI / p.duration;
        let h = QubitOperator::sx().scale_re(w1) + QubitOperator::sz().scale_re(detuning);
        let a = h.scale(C64::new(0.0, -p.duration / 1024.0));
        let mut term = QubitOperator::identity();
        let mut sum = QubitOperator::identity();
        for k in 1..25 {
            term = (term * a).scale_re(1.0 / k as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        assert!((u.trace() - sum.trace()).norm() < 1e-12);
        assert!((u - sum).frobenius_norm() < 1e-12);
        // Tilted axis: no longer a pure inversion.
        assert!((u.phase_insensitive_overlap(&rotation_propagator(0.0, PI)) - 1.0).abs() > 1e-6);
    }

    #[test]
    fn finite_mode_rejects_zero_duration() {
        let p = PulseSpec::ideal(0.0);
        assert_eq!(
            imperfect_pulse(&p, 0.0, PulseMode::Finite),
            Err(PulseError::NonPositiveDuration(0.0))
        );
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Finite".parse::<PulseMode>().unwrap(), PulseMode::Finite);
        assert!("gaussian".parse::<PulseMode>().is_err());
    }
}
