// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Monte Carlo echo experiments.
//!
//! Every realization draws a static offset, a slow OU trajectory and
//! optionally its own flip-angle error, then propagates the prepared state
//! through whole cycles and records the prepared component at each cycle
//! boundary. Ensembles average realizations in fixed-size chunks whose
//! partial sums are merged in index order, so results do not depend on the
//! number of worker threads.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{stream_rng, NoiseError, NoiseModel, NoiseTrajectory, StreamPurpose};
use crate::pulse::{imperfect_pulse, PulseError, PulseMode, PulseSpec};
use crate::sequence::{build_cycle, cycles_for_duration, Element, InitialState, SequenceCycle, SequenceError, SequenceKind};
use crate::spin::{rotation_propagator, z_rotation, QubitOperator};

/// Realizations per reduction chunk.
const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment parameter {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("amplitude {amplitude} at t = {time} s is not positive; error per pulse is undefined")]
    NonPositiveAmplitude { time: f64, amplitude: f64 },
    #[error("series have different time grids")]
    MismatchedSeries,
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// Default number of realizations per ensemble.
pub const DEFAULT_REALIZATIONS: usize = 2000;

/// Everything needed to run one (sequence, τ) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sequence: SequenceKind,
    /// Delay between pulses (s).
    pub tau: f64,
    /// Pulse template: flip error, offset and duration shared by all pulses.
    pub pulse: PulseSpec,
    /// Standard deviation of the flip-angle error across realizations
    /// (RF inhomogeneity over the sample). Zero gives every spin the
    /// template's error.
    pub flip_error_spread: f64,
    pub mode: PulseMode,
    pub noise: NoiseModel,
    /// Measurement window (s).
    pub duration: f64,
    pub realizations: usize,
    pub initial_state: InitialState,
    /// Grid step of the slow-noise trajectory (s).
    pub dt: f64,
}

impl ExperimentConfig {
    /// Noise-free, error-free delta-pulse experiment with the sequence's
    /// default preparation.
    pub fn new(sequence: SequenceKind, tau: f64, duration: f64) -> Self {
        Self {
            sequence,
            tau,
            pulse: PulseSpec::default(),
            flip_error_spread: 0.0,
            mode: PulseMode::Delta,
            noise: NoiseModel::noiseless(),
            duration,
            realizations: 1,
            initial_state: sequence.default_initial_state(),
            dt: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.noise.validate()?;
        if self.realizations < 1 {
            return Err(invalid("realizations", "must be >= 1"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("must be finite and > 0, got {}", self.duration)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("must be finite and > 0, got {}", self.tau)));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.dt > self.noise.tau_corr / 10.0 {
            return Err(invalid(
                "dt",
                format!(
                    "{} s does not resolve the slow noise; must be <= tau_corr/10 = {} s",
                    self.dt,
                    self.noise.tau_corr / 10.0
                ),
            ));
        }
        if !(self.flip_error_spread >= 0.0 && self.flip_error_spread.is_finite()) {
            return Err(invalid("flip_error_spread", "must be finite and >= 0"));
        }
        if !self.pulse.flip_error.is_finite() {
            return Err(invalid("flip_error", "must be finite"));
        }
        let cycle = self.cycle()?;
        if cycles_for_duration(self.duration, &cycle) == 0 {
            return Err(invalid(
                "duration",
                format!("{} s is shorter than one cycle ({} s)", self.duration, cycle.cycle_time),
            ));
        }
        Ok(())
    }

    pub fn cycle(&self) -> Result<SequenceCycle, ExperimentError> {
        Ok(build_cycle(self.sequence, self.tau, &self.pulse, self.mode)?)
    }
}

/// Echo amplitudes at cycle boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSeries {
    pub times: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Cumulative pulse count at each point.
    pub pulses: Vec<usize>,
    pub realizations: usize,
    /// Constant of the irreducible envelope already applied to the
    /// amplitudes; infinite when none was applied.
    pub t2_irr: f64,
}

impl EchoSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Series without error bars, e.g. read back from a file or synthesized.
    pub fn from_amplitudes(times: Vec<f64>, amplitudes: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            times,
            amplitudes,
            std_errors: vec![0.0; n],
            pulses: vec![0; n],
            realizations: 1,
            t2_irr: f64::INFINITY,
        }
    }

    /// Pointwise mean of series sharing one time grid; standard errors add in
    /// quadrature.
    pub fn average(series: &[EchoSeries]) -> Result<EchoSeries, ExperimentError> {
        let first = series.first().ok_or(ExperimentError::MismatchedSeries)?;
        if series.iter().any(|s| s.times != first.times) {
            return Err(ExperimentError::MismatchedSeries);
        }
        let k = series.len() as f64;
        let n = first.len();
        let mut out = first.clone();
        for i in 0..n {
            out.amplitudes[i] = series.iter().map(|s| s.amplitudes[i]).sum::<f64>() / k;
            out.std_errors[i] = series.iter().map(|s| s.std_errors[i].powi(2)).sum::<f64>().sqrt() / k;
        }
        out.realizations = series.iter().map(|s| s.realizations).sum();
        Ok(out)
    }
}

/// Per-realization draws.
struct Realization {
    offset: f64,
    trajectory: Option<NoiseTrajectory>,
    flip_error: f64,
}

impl Realization {
    fn draw(config: &ExperimentConfig, span: f64, index: u64) -> Result<Self, ExperimentError> {
        let noise = &config.noise;
        let offset = noise.sample_static_offset(index);
        let trajectory = if noise.sigma_ou > 0.0 {
            // One extra step of margin so boundary times never leave the grid.
            Some(noise.generate_ou_trajectory(config.dt, span + config.dt, index)?)
        } else {
            None
        };
        let flip_error = if config.flip_error_spread > 0.0 {
            let mut rng = stream_rng(noise.seed, StreamPurpose::PulseError, index);
            let xi: f64 = StandardNormal.sample(&mut rng);
            config.pulse.flip_error + config.flip_error_spread * xi
        } else {
            config.pulse.flip_error
        };
        Ok(Self {
            offset,
            trajectory,
            flip_error,
        })
    }

    fn phase(&self, t0: f64, t1: f64) -> Result<f64, ExperimentError> {
        let slow = match &self.trajectory {
            Some(tr) => tr.accumulated_phase(t0, t1)?,
            None => 0.0,
        };
        Ok(self.offset * (t1 - t0) + slow)
    }

    fn detuning(&self, t: f64) -> f64 {
        self.offset + self.trajectory.as_ref().map_or(0.0, |tr| tr.value_at(t))
    }

    fn delay(&self, t0: f64, d: f64) -> Result<QubitOperator, ExperimentError> {
        Ok(z_rotation(self.phase(t0, t0 + d)?))
    }

    fn pulse(&self, p: &PulseSpec, t0: f64, mode: PulseMode) -> Result<QubitOperator, ExperimentError> {
        let p = p.with_flip_error(self.flip_error);
        let detuning = match mode {
            PulseMode::Delta => 0.0,
            PulseMode::Finite => self.detuning(t0 + 0.5 * p.duration),
        };
        Ok(imperfect_pulse(&p, detuning, mode)?)
    }
}

/// Observation grid shared by every realization of a config.
struct Plan {
    cycle: SequenceCycle,
    points: usize,
    observable: QubitOperator,
}

impl Plan {
    fn new(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let cycle = config.cycle()?;
        let points = cycles_for_duration(config.duration, &cycle) + 1;
        // Measure along the ideally refocused image of the prepared spin; for
        // every DD cycle the ideal cycle is ±1 and this is the prepared axis.
        let ideal = if config.sequence == SequenceKind::Hahn {
            rotation_propagator(SequenceKind::Hahn.phases()[0], std::f64::consts::PI)
        } else {
            cycle.ideal_propagator()
        };
        let o = config.initial_state.observable();
        let observable = ideal * o * ideal.dagger();
        Ok(Self {
            cycle,
            points,
            observable,
        })
    }

    fn time(&self, k: usize) -> f64 {
        k as f64 * self.cycle.cycle_time
    }

    fn span(&self) -> f64 {
        self.time(self.points - 1)
    }

    fn pulses(&self, k: usize) -> usize {
        if self.cycle.kind == SequenceKind::Hahn {
            usize::from(k > 0)
        } else {
            k * self.cycle.pulse_count()
        }
    }
}

fn amplitudes(config: &ExperimentConfig, plan: &Plan, index: u64) -> Result<Vec<f64>, ExperimentError> {
    let r = Realization::draw(config, plan.span(), index)?;
    let rho0 = config.initial_state.state();
    let mode = config.mode;
    let mut out = Vec::with_capacity(plan.points);
    out.push(1.0);
    if config.sequence == SequenceKind::Hahn {
        // Independent single-echo experiments: refocusing pulse at the middle
        // of each echo time.
        let pulse = plan.cycle.pulses().next().copied().unwrap_or_default();
        let tp = pulse.occupied_time(mode);
        for k in 1..plan.points {
            let t = plan.time(k);
            let half = 0.5 * (t - tp);
            let u = r.delay(half + tp, half)? * r.pulse(&pulse, half, mode)? * r.delay(0.0, half)?;
            let m = rho0.evolve(&u).magnetization(&plan.observable);
            out.push(m * config.noise.irreducible_envelope(t));
        }
        return Ok(out);
    }
    let mut state = rho0;
    for k in 1..plan.points {
        let mut t = plan.time(k - 1);
        let mut u = QubitOperator::identity();
        for e in &plan.cycle.elements {
            let step = match e {
                Element::Delay(d) => {
                    let s = r.delay(t, *d)?;
                    t += d;
                    s
                }
                Element::Pulse(p) => {
                    let s = r.pulse(p, t, mode)?;
                    t += p.occupied_time(mode);
                    s
                }
            };
            u = step * u;
        }
        state = state.evolve(&u);
        let tk = plan.time(k);
        out.push(state.magnetization(&plan.observable) * config.noise.irreducible_envelope(tk));
    }
    Ok(out)
}

fn series_shell(config: &ExperimentConfig, plan: &Plan, realizations: usize) -> EchoSeries {
    EchoSeries {
        times: (0..plan.points).map(|k| plan.time(k)).collect(),
        amplitudes: Vec::new(),
        std_errors: vec![0.0; plan.points],
        pulses: (0..plan.points).map(|k| plan.pulses(k)).collect(),
        realizations,
        t2_irr: config.noise.t2_irr,
    }
}

/// Echo series of a single realization.
pub fn run_trajectory(config: &ExperimentConfig, realization_index: u64) -> Result<EchoSeries, ExperimentError> {
    let plan = Plan::new(config)?;
    let mut s = series_shell(config, &plan, 1);
    s.amplitudes = amplitudes(config, &plan, realization_index)?;
    Ok(s)
}

/// Running mean and sum of squared deviations per point (Chan et al. merge).
#[derive(Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(points: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; points],
            m2: vec![0.0; points],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let n = self.count + other.count;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.count / n;
            self.m2[i] += other.m2[i] + d * d * self.count * other.count / n;
        }
        self.count = n;
    }
}

/// Ensemble average over `config.realizations` realizations (indices
/// `0..N`), with standard errors `std/√N`.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<EchoSeries, ExperimentError> {
    let plan = Plan::new(config)?;
    let n = config.realizations;
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Result<Moments, ExperimentError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::new(plan.points);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                m.push(&amplitudes(config, &plan, i as u64)?);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(plan.points);
    for m in partial {
        total.merge(&m?);
    }
    let mut s = series_shell(config, &plan, n);
    s.amplitudes = total.mean;
    if n >= 2 {
        let nf = n as f64;
        s.std_errors = total.m2.iter().map(|m2| (m2 / (nf - 1.0)).sqrt() / nf.sqrt()).collect();
    }
    // The first point is exactly 1 for every realization.
    s.amplitudes[0] = 1.0;
    s.std_errors[0] = 0.0;
    Ok(s)
}

/// Ensemble-averaged free induction decay sampled every `step` up to
/// `duration`.
pub fn run_free_induction(
    noise: &NoiseModel,
    initial_state: InitialState,
    step: f64,
    duration: f64,
    realizations: usize,
    dt: f64,
) -> Result<EchoSeries, ExperimentError> {
    noise.validate()?;
    if !(step > 0.0 && duration >= step) {
        return Err(invalid("duration", "must be at least one sampling step"));
    }
    if realizations < 1 {
        return Err(invalid("realizations", "must be >= 1"));
    }
    let points = (duration / step * (1.0 + 4.0 * f64::EPSILON)).floor() as usize + 1;
    let times: Vec<f64> = (0..points).map(|k| k as f64 * step).collect();
    let span = times[points - 1];
    let o = initial_state.observable();
    let rho0 = initial_state.state();
    let config = ExperimentConfig {
        noise: *noise,
        dt,
        ..ExperimentConfig::new(SequenceKind::Hahn, step, duration)
    };
    let run = |i: usize| -> Result<Vec<f64>, ExperimentError> {
        let r = Realization::draw(&config, span, i as u64)?;
        times
            .iter()
            .map(|&t| {
                let u = z_rotation(r.phase(0.0, t)?);
                Ok(rho0.evolve(&u).magnetization(&o) * noise.irreducible_envelope(t))
            })
            .collect()
    };
    let chunks = realizations.div_ceil(CHUNK);
    let partial: Vec<Result<Moments, ExperimentError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::new(points);
            for i in c * CHUNK..((c + 1) * CHUNK).min(realizations) {
                m.push(&run(i)?);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(points);
    for m in partial {
        total.merge(&m?);
    }
    let nf = realizations as f64;
    let std_errors = if realizations >= 2 {
        total.m2.iter().map(|m2| (m2 / (nf - 1.0)).sqrt() / nf.sqrt()).collect()
    } else {
        vec![0.0; points]
    };
    let mut amplitudes = total.mean;
    amplitudes[0] = 1.0;
    Ok(EchoSeries {
        times,
        amplitudes,
        std_errors,
        pulses: vec![0; points],
        realizations,
        t2_irr: noise.t2_irr,
    })
}

/// First time at which the series falls to `level`, linearly interpolated
/// between samples. `None` if it never does.
pub fn crossing_time(series: &EchoSeries, level: f64) -> Option<f64> {
    let (t, a) = (&series.times, &series.amplitudes);
    (1..t.len()).find(|&i| a[i] <= level).map(|i| {
        let f = (a[i - 1] - level) / (a[i - 1] - a[i]);
        t[i - 1] + f * (t[i] - t[i - 1])
    })
}

/// One point of the error-per-pulse curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPerPulse {
    pub pulses: usize,
    pub time: f64,
    pub eta: f64,
}

/// `η(n) = −ln(s(n)/s(0))/n` at every cycle boundary with `n ≥ 1` pulses,
/// after dividing out the irreducible envelope.
///
/// Fails on the first non-positive amplitude.
pub fn error_per_pulse(series: &EchoSeries, pulses_per_cycle: usize) -> Result<Vec<ErrorPerPulse>, ExperimentError> {
    let (points, bad) = eta_points(series, pulses_per_cycle);
    match bad {
        Some(i) => Err(ExperimentError::NonPositiveAmplitude {
            time: series.times[i],
            amplitude: series.amplitudes[i],
        }),
        None => Ok(points),
    }
}

/// As [`error_per_pulse`], but returns the valid prefix up to the first
/// non-positive amplitude instead of failing.
pub fn error_per_pulse_prefix(series: &EchoSeries, pulses_per_cycle: usize) -> Vec<ErrorPerPulse> {
    eta_points(series, pulses_per_cycle).0
}

fn eta_points(series: &EchoSeries, pulses_per_cycle: usize) -> (Vec<ErrorPerPulse>, Option<usize>) {
    let s0 = series.amplitudes[0];
    let mut out = Vec::with_capacity(series.len());
    for i in 1..series.len() {
        let t = series.times[i];
        let a = series.amplitudes[i];
        if !(a > 0.0) || !(s0 > 0.0) {
            return (out, Some(i));
        }
        let n = i * pulses_per_cycle;
        let bare = a / crate::noise::irreducible_envelope(t, series.t2_irr) / s0;
        out.push(ErrorPerPulse {
            pulses: n,
            time: t,
            eta: -bare.ln() / n as f64,
        });
    }
    (out, None)
}

/// Error per pulse of two series at the largest common pulse count
/// `n ≤ max_pulses` where both amplitudes exceed `min_snr` standard errors.
///
/// Returns `(n, η_a, η_b)`.
pub fn compare_error_per_pulse(
    a: &EchoSeries,
    ppc_a: usize,
    b: &EchoSeries,
    ppc_b: usize,
    max_pulses: usize,
    min_snr: f64,
) -> Option<(usize, f64, f64)> {
    let resolved = |s: &EchoSeries, ppc: usize| -> Vec<(usize, f64)> {
        let etas = error_per_pulse_prefix(s, ppc);
        etas.into_iter()
            .enumerate()
            .take_while(|(i, _)| s.amplitudes[i + 1] > min_snr * s.std_errors[i + 1])
            .map(|(_, e)| (e.pulses, e.eta))
            .collect()
    };
    let ra = resolved(a, ppc_a);
    let rb = resolved(b, ppc_b);
    ra.iter()
        .rev()
        .filter(|(n, _)| *n <= max_pulses)
        .find_map(|&(n, ea)| rb.iter().find(|(m, _)| *m == n).map(|&(_, eb)| (n, ea, eb)))
}

/// Output file name for an echo series: `<label>_tau<µs>.csv`.
pub fn echo_file_name(kind: SequenceKind, tau: f64) -> String {
    let us = tau * 1e6;
    let rounded = us.round();
    if (us - rounded).abs() < 1e-6 * us.abs().max(1.0) {
        format!("{}_tau{}.csv", kind.label(), rounded as i64)
    } else {
        format!("{}_tau{}.csv", kind.label(), us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn static_only(sigma: f64) -> NoiseModel {
        NoiseModel {
            sigma_static: sigma,
            ..NoiseModel::noiseless()
        }
        .with_seed(7)
    }

    #[test]
    fn noiseless_error_free_is_flat() {
        for kind in SequenceKind::ALL {
            let c = ExperimentConfig::new(kind, 1e-3, 0.05);
            let s = run_trajectory(&c, 0).unwrap();
            assert!(s.amplitudes.iter().all(|&a| (a - 1.0).abs() < 1e-12), "{kind}");
            assert_eq!(s.times[0], 0.0);
        }
    }

    #[test]
    fn static_noise_is_refocused() {
        for kind in SequenceKind::ALL {
            for state in [InitialState::Parallel, InitialState::Perpendicular] {
                let c = ExperimentConfig {
                    noise: static_only(485.5),
                    realizations: 20,
                    initial_state: state,
                    ..ExperimentConfig::new(kind, 2e-3, 0.1)
                };
                let s = run_ensemble(&c).unwrap();
                for a in &s.amplitudes {
                    assert!((a - 1.0).abs() < 1e-10, "{kind} {state:?}: {a}");
                }
            }
        }
    }

    #[test]
    fn envelope_only_series_equals_envelope() {
        let noise = NoiseModel {
            t2_irr: 0.276,
            ..NoiseModel::noiseless()
        };
        let c = ExperimentConfig {
            noise,
            ..ExperimentConfig::new(SequenceKind::Xy8s, 1e-3, 0.3)
        };
        let s = run_trajectory(&c, 3).unwrap();
        for (t, a) in s.times.iter().zip(&s.amplitudes) {
            assert!((a - (-t / 0.276).exp()).abs() < 1e-12);
        }
    }

    /// Direct product of 2x2 propagators, no noise, no Monte Carlo.
    fn oracle(kind: SequenceKind, eps: f64, cycles: usize, state: InitialState) -> Vec<f64> {
        let phases = kind.phases();
        let mut rho = state.state();
        let mut out = vec![1.0];
        for _ in 0..cycles {
            for &p in &phases {
                rho = rho.evolve(&rotation_propagator(p, (1.0 + eps) * PI));
            }
            out.push(rho.magnetization(&state.observable()));
        }
        out
    }

    #[test]
    fn cp_cpmg_asymmetry_matches_propagator_oracle() {
        let eps = 0.02;
        let tau = 1e-4;
        let cycles = 500; // 1000 pulses
        let mut mins = Vec::new();
        for kind in [SequenceKind::Cp, SequenceKind::Cpmg] {
            let mut c = ExperimentConfig::new(kind, tau, cycles as f64 * 2.0 * tau);
            c.pulse.flip_error = eps;
            let s = run_trajectory(&c, 0).unwrap();
            assert_eq!(s.len(), cycles + 1);
            assert_eq!(*s.pulses.last().unwrap(), 1000);
            let o = oracle(kind, eps, cycles, kind.default_initial_state());
            for (a, b) in s.amplitudes.iter().zip(&o) {
                assert!((a - b).abs() < 1e-10);
            }
            mins.push(s.amplitudes.iter().copied().fold(f64::INFINITY, f64::min));
        }
        assert!(mins[0] <= 0.5, "CP min {}", mins[0]);
        assert!(mins[1] >= 0.99, "CPMG min {}", mins[1]);
    }

    #[test]
    fn parallel_state_decays_much_slower_than_perpendicular() {
        // Fit-free check: loss after the first 40 pulses.
        let eps = 0.02;
        let loss = |state| {
            let mut c = ExperimentConfig {
                initial_state: state,
                ..ExperimentConfig::new(SequenceKind::Cpmg, 1e-4, 40.0 * 1e-4)
            };
            c.pulse.flip_error = eps;
            let s = run_trajectory(&c, 0).unwrap();
            1.0 - s.amplitudes.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let par = loss(InitialState::Parallel);
        let perp = loss(InitialState::Perpendicular);
        assert!(perp > 10.0 * par, "{perp} vs {par}");
    }

    #[test]
    fn single_realization_ensemble_equals_trajectory() {
        let c = ExperimentConfig {
            noise: NoiseModel::calibrated(),
            ..ExperimentConfig::new(SequenceKind::KddXy, 5e-4, 0.05)
        };
        let e = run_ensemble(&c).unwrap();
        let t = run_trajectory(&c, 0).unwrap();
        assert_eq!(e.amplitudes, t.amplitudes);
        assert!(e.std_errors.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn reruns_are_bit_identical_and_thread_independent() {
        let mut c = ExperimentConfig {
            noise: NoiseModel::calibrated(),
            realizations: 150,
            flip_error_spread: 0.05,
            ..ExperimentConfig::new(SequenceKind::Xy4s, 2e-4, 0.03)
        };
        c.pulse.flip_error = 0.01;
        let a = run_ensemble(&c).unwrap();
        let b = run_ensemble(&c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let d = pool.install(|| run_ensemble(&c).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, d);
    }

    #[test]
    fn finite_pulses_run_and_stay_bounded() {
        let c = ExperimentConfig {
            noise: NoiseModel::calibrated(),
            mode: PulseMode::Finite,
            pulse: PulseSpec {
                duration: crate::pulse::REFERENCE_PULSE_DURATION,
                flip_error: 0.01,
                ..PulseSpec::default()
            },
            realizations: 8,
            ..ExperimentConfig::new(SequenceKind::Xy8a, 1e-4, 0.02)
        };
        let s = run_ensemble(&c).unwrap();
        let cycle = c.cycle().unwrap();
        assert!((s.times[1] - 8.0 * (1e-4 + 37.5e-6)).abs() < 1e-15);
        assert!((cycle.cycle_time - s.times[1]).abs() < 1e-15);
        assert!(s.amplitudes.iter().all(|a| a.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn std_errors_scale_as_inverse_sqrt_n() {
        // Bounded, well-spread amplitudes so the sample std itself is stable.
        let base = ExperimentConfig {
            noise: NoiseModel::calibrated(),
            flip_error_spread: 0.05,
            ..ExperimentConfig::new(SequenceKind::Cp, 1e-3, 0.04)
        };
        let se = |n| {
            let c = ExperimentConfig {
                realizations: n,
                ..base.clone()
            };
            let s = run_ensemble(&c).unwrap();
            s.std_errors[1..].iter().sum::<f64>() / (s.len() - 1) as f64
        };
        let (s2, s3, s4) = (se(100), se(1000), se(10_000));
        for (ratio, label) in [(s2 / s3, "1e2/1e3"), (s3 / s4, "1e3/1e4")] {
            let expected = 10f64.sqrt();
            assert!((ratio / expected - 1.0).abs() < 0.2, "{label}: {ratio}");
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::new(SequenceKind::Cpmg, 1e-3, 0.1);
        c.realizations = 0;
        assert!(matches!(c.validate(), Err(ExperimentError::InvalidConfig { field: "realizations", .. })));
        let mut c = ExperimentConfig::new(SequenceKind::Cpmg, 1e-3, 0.1);
        c.noise = NoiseModel::calibrated();
        c.dt = 0.05;
        assert!(matches!(c.validate(), Err(ExperimentError::InvalidConfig { field: "dt", .. })));
        let c = ExperimentConfig::new(SequenceKind::Cpmg, 1e-3, 1e-3);
        assert!(matches!(c.validate(), Err(ExperimentError::InvalidConfig { field: "duration", .. })));
        let c = ExperimentConfig::new(SequenceKind::Cpmg, 1e-3, -1.0);
        assert!(matches!(c.validate(), Err(ExperimentError::InvalidConfig { field: "duration", .. })));
    }

    #[test]
    fn cpmg_16ms_has_15_points_in_half_a_second() {
        let c = ExperimentConfig::new(SequenceKind::Cpmg, 16e-3, 0.5);
        let s = run_trajectory(&c, 0).unwrap();
        assert_eq!(s.len(), 16);
        assert!((s.times[15] - 0.48).abs() < 1e-12);
    }

    #[test]
    fn free_induction_matches_gaussian() {
        let sigma = 485.5;
        let s = run_free_induction(&static_only(sigma), InitialState::Parallel, 2e-4, 8e-3, 4000, 1e-3).unwrap();
        for (t, a) in s.times.iter().zip(&s.amplitudes) {
            let g = (-0.5 * (sigma * t).powi(2)).exp();
            assert!((a - g).abs() < 0.05, "t={t}: {a} vs {g}");
        }
        let t_e = crossing_time(&s, (-1.0f64).exp()).unwrap();
        let expected = 2f64.sqrt() / sigma;
        assert!((t_e / expected - 1.0).abs() < 0.05, "{t_e} vs {expected}");
    }

    #[test]
    fn hahn_refocuses_static_but_not_slow_noise() {
        let noise = NoiseModel {
            sigma_static: 485.5,
            sigma_ou: 30.0,
            tau_corr: 0.1,
            ..NoiseModel::noiseless()
        };
        let c = ExperimentConfig {
            noise,
            realizations: 200,
            ..ExperimentConfig::new(SequenceKind::Hahn, 5e-3, 0.2)
        };
        let s = run_ensemble(&c).unwrap();
        assert_eq!(s.pulses[0], 0);
        assert!(s.pulses[1..].iter().all(|&p| p == 1));
        assert!(s.amplitudes[1] > 0.99);
        assert!(*s.amplitudes.last().unwrap() < 0.9);
    }

    #[test]
    fn eta_examples() {
        let times: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let flat = EchoSeries::from_amplitudes(times.clone(), vec![1.0; 20]);
        assert!(error_per_pulse(&flat, 4).unwrap().iter().all(|e| e.eta == 0.0));
        let ppc = 2;
        let decay: Vec<f64> = (0..20).map(|k| (-0.01 * (k * ppc) as f64).exp()).collect();
        let s = EchoSeries::from_amplitudes(times.clone(), decay);
        for e in error_per_pulse(&s, ppc).unwrap() {
            assert!((e.eta - 0.01).abs() < 1e-12);
        }
        let mut flipped: Vec<f64> = vec![1.0; 20];
        flipped[5] = -0.1;
        let s = EchoSeries::from_amplitudes(times, flipped);
        assert!(matches!(error_per_pulse(&s, 1), Err(ExperimentError::NonPositiveAmplitude { .. })));
        assert_eq!(error_per_pulse_prefix(&s, 1).len(), 4);
    }

    #[test]
    fn eta_divides_out_envelope() {
        let times: Vec<f64> = (0..10).map(|k| 0.01 * k as f64).collect();
        let amps = times.iter().map(|t| (-t / 0.276f64).exp()).collect();
        let mut s = EchoSeries::from_amplitudes(times, amps);
        s.t2_irr = 0.276;
        for e in error_per_pulse(&s, 8).unwrap() {
            assert!(e.eta.abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_uses_largest_common_resolved_count() {
        let mk = |ppc: usize, rate: f64| {
            let times: Vec<f64> = (0..60).map(|k| k as f64).collect();
            let amps = (0..60).map(|k| (-rate * (k * ppc) as f64).exp()).collect();
            let mut s = EchoSeries::from_amplitudes(times, amps);
            s.std_errors = vec![0.01; 60];
            s
        };
        let a = mk(2, 0.05);
        let b = mk(8, 0.001);
        let (n, ea, eb) = compare_error_per_pulse(&a, 2, &b, 8, 200, 3.0).unwrap();
        // a stays above 0.03 up to n = 70.
        assert_eq!(n, 64);
        assert!((ea - 0.05).abs() < 1e-12 && (eb - 0.001).abs() < 1e-12);
    }

    #[test]
    fn averaging_series() {
        let a = EchoSeries::from_amplitudes(vec![0.0, 1.0], vec![1.0, 0.5]);
        let b = EchoSeries::from_amplitudes(vec![0.0, 1.0], vec![1.0, 0.7]);
        let m = EchoSeries::average(&[a.clone(), b]).unwrap();
        assert!((m.amplitudes[1] - 0.6).abs() < 1e-15);
        let c = EchoSeries::from_amplitudes(vec![0.0, 2.0], vec![1.0, 0.7]);
        assert!(EchoSeries::average(&[a, c]).is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(echo_file_name(SequenceKind::Cpmg, 16e-3), "cpmg_tau16000.csv");
        assert_eq!(echo_file_name(SequenceKind::Xy8s, 1e-4), "xy8s_tau100.csv");
        assert_eq!(echo_file_name(SequenceKind::KddX, 2.5e-7), "kddx_tau0.25.csv");
    }
}
