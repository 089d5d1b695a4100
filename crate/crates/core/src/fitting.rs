// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Exponential decay fits and decay-time scans.
//!
//! Models are `A·exp(−t/T2)` and `a·exp(−t/T2_f) + b·exp(−t/T2_s)`. Rates are
//! fitted through their logarithm so decay times stay positive. The solver is
//! Levenberg-Marquardt with steps accepted only when the cost drops.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{run_ensemble, EchoSeries, ExperimentConfig};
use crate::sequence::SequenceKind;

/// Relative step size below which the solver stops.
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;
/// Double fits whose decay times are closer than this ratio fall back to a
/// single exponential.
pub const SEPARATION_RATIO: f64 = 0.8;
/// Double fits where one component carries less than this fraction of the
/// amplitude fall back to a single exponential.
pub const MIN_COMPONENT_FRACTION: f64 = 1e-3;
/// Points below this many standard errors are excluded.
pub const NOISE_FLOOR_SNR: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{model} fit needs at least {needed} usable points, got {got}")]
    TooFewPoints { model: FitModel, needed: usize, got: usize },
    #[error("series does not decay: {0}")]
    Degenerate(String),
    #[error("fit did not produce finite parameters after {iterations} iterations")]
    NonConvergence { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Single,
    #[default]
    Double,
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Double => "double",
        })
    }
}

impl std::str::FromStr for FitModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Self::Single),
            "double" => Ok(Self::Double),
            other => Err(format!("unknown fit model '{other}' (expected 'single' or 'double')")),
        }
    }
}

/// Result of a decay fit.
///
/// A single exponential is reported with `a = 0`, `b = A` and
/// `t2_fast = t2_slow = T2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: FitModel,
    pub a: f64,
    pub t2_fast: f64,
    pub b: f64,
    pub t2_slow: f64,
    /// `sqrt(Σ w_i r_i²)` over the fitted points.
    pub residual: f64,
    pub converged: bool,
    /// Set when a double fit was replaced by a single one.
    pub fallback: bool,
    pub iterations: usize,
    /// Points dropped by the noise-floor cut.
    pub excluded_points: usize,
    pub weighted: bool,
}

impl DecayFit {
    /// Model value at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.model {
            FitModel::Single => self.b * (-t / self.t2_slow).exp(),
            FitModel::Double => self.a * (-t / self.t2_fast).exp() + self.b * (-t / self.t2_slow).exp(),
        }
    }

    /// Decay time of a single fit, slow time of a double fit.
    pub fn t2(&self) -> f64 {
        self.t2_slow
    }
}

/// Points entering a fit, with weights.
struct FitData {
    t: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    excluded: usize,
    weighted: bool,
}

impl FitData {
    fn new(series: &EchoSeries) -> Self {
        let se = &series.std_errors;
        let weighted = series.realizations >= 2 && se.iter().any(|&s| s > 0.0);
        if !weighted {
            return Self {
                t: series.times.clone(),
                y: series.amplitudes.clone(),
                w: vec![1.0; series.len()],
                excluded: 0,
                weighted,
            };
        }
        // The first point has zero spread by construction; floor the errors
        // at the median of the positive ones.
        let mut positive: Vec<f64> = se.iter().copied().filter(|&s| s > 0.0).collect();
        positive.sort_by(f64::total_cmp);
        let floor = positive[positive.len() / 2];
        let mut out = Self {
            t: Vec::new(),
            y: Vec::new(),
            w: Vec::new(),
            excluded: 0,
            weighted,
        };
        for i in 0..series.len() {
            let (t, y, s) = (series.times[i], series.amplitudes[i], se[i]);
            if y < NOISE_FLOOR_SNR * s {
                out.excluded += 1;
                continue;
            }
            out.t.push(t);
            out.y.push(y);
            out.w.push(1.0 / s.max(floor));
        }
        out
    }

    fn len(&self) -> usize {
        self.t.len()
    }
}

/// Model with parameters `p`: returns value and gradient at `t`.
type Model = fn(&[f64], f64, &mut [f64]) -> f64;

fn single_model(p: &[f64], t: f64, grad: &mut [f64]) -> f64 {
    // p = [A, ln k]
    let k = p[1].exp();
    let e = (-k * t).exp();
    grad[0] = e;
    grad[1] = -p[0] * t * k * e;
    p[0] * e
}

fn double_model(p: &[f64], t: f64, grad: &mut [f64]) -> f64 {
    // p = [a, ln k_f, b, ln k_s]
    let (kf, ks) = (p[1].exp(), p[3].exp());
    let (ef, es) = ((-kf * t).exp(), (-ks * t).exp());
    grad[0] = ef;
    grad[1] = -p[0] * t * kf * ef;
    grad[2] = es;
    grad[3] = -p[2] * t * ks * es;
    p[0] * ef + p[2] * es
}

struct Solution {
    params: Vec<f64>,
    cost: f64,
    initial_cost: f64,
    iterations: usize,
    converged: bool,
}

fn residuals(model: Model, p: &[f64], d: &FitData, r: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) -> f64 {
    let mut g = vec![0.0; p.len()];
    let mut jac = jac;
    for i in 0..d.len() {
        let v = model(p, d.t[i], &mut g);
        r[i] = d.w[i] * (v - d.y[i]);
        if let Some(j) = jac.as_deref_mut() {
            for (c, gc) in g.iter().enumerate() {
                j[(i, c)] = d.w[i] * gc;
            }
        }
    }
    r.norm_squared()
}

/// Levenberg-Marquardt with Marquardt scaling.
fn levenberg_marquardt(model: Model, start: Vec<f64>, d: &FitData) -> Solution {
    let (m, n) = (d.len(), start.len());
    let mut p = start;
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, n);
    let mut cost = residuals(model, &p, d, &mut r, Some(&mut jac));
    let initial_cost = cost;
    let mut lambda = 1e-3;
    let mut trial_r = DVector::zeros(m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        if grad.amax() <= 1e-300 || cost == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = match a.lu().solve(&(-&grad)) {
                Some(s) if s.iter().all(|x| x.is_finite()) => s,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_cost = residuals(model, &trial, d, &mut trial_r, None);
            if trial_cost.is_finite() && trial_cost < cost {
                let pnorm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let small = step.norm() <= STEP_TOLERANCE * (pnorm + STEP_TOLERANCE);
                p = trial;
                cost = residuals(model, &p, d, &mut r, Some(&mut jac));
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping reduces the cost: a (numerically) stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    Solution {
        params: p,
        cost,
        initial_cost,
        iterations,
        converged,
    }
}

/// Weighted log-linear regression `ln y = c − k t` over positive points.
fn log_linear(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, &y)| y > 0.0).map(|(&t, &y)| (t, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum::<f64>() / stt;
    Some(((ml - slope * mt).exp(), -slope))
}

fn is_constant(y: &[f64]) -> bool {
    let first = y[0];
    y.iter().all(|&v| (v - first).abs() <= 1e-12 * first.abs().max(1e-300))
}

fn fit_single_data(d: &FitData) -> Result<DecayFit, FitError> {
    if d.len() < 3 {
        return Err(FitError::TooFewPoints {
            model: FitModel::Single,
            needed: 3,
            got: d.len(),
        });
    }
    if is_constant(&d.y) {
        return Err(FitError::Degenerate("constant series; decay time is infinite".into()));
    }
    let span = d.t[d.len() - 1] - d.t[0];
    let (a0, k0) = match log_linear(&d.t, &d.y) {
        Some((a, k)) if k > 0.0 && k.is_finite() => (a, k),
        _ => (d.y[0], 1.0 / span.max(f64::MIN_POSITIVE)),
    };
    let sol = levenberg_marquardt(single_model, vec![a0, k0.ln()], d);
    let (amp, k) = (sol.params[0], sol.params[1].exp());
    if !(amp.is_finite() && k.is_finite()) {
        return Err(FitError::NonConvergence {
            iterations: sol.iterations,
        });
    }
    if k == 0.0 || !(1.0 / k).is_finite() {
        return Err(FitError::Degenerate("fitted decay time is infinite".into()));
    }
    debug_assert!(sol.cost <= sol.initial_cost);
    Ok(DecayFit {
        model: FitModel::Single,
        a: 0.0,
        t2_fast: 1.0 / k,
        b: amp,
        t2_slow: 1.0 / k,
        residual: sol.cost.sqrt(),
        converged: sol.converged,
        fallback: false,
        iterations: sol.iterations,
        excluded_points: d.excluded,
        weighted: d.weighted,
    })
}

/// Least-squares fit of `A·exp(−t/T2)`.
pub fn fit_single_exponential(series: &EchoSeries) -> Result<DecayFit, FitError> {
    fit_single_data(&FitData::new(series))
}

/// Start for the double fit: slow component from the last third of the
/// points, fast component from the first third after removing the slow one.
fn double_start(d: &FitData) -> Vec<f64> {
    let m = d.len();
    let third = (m / 3).max(2);
    let span = d.t[m - 1] - d.t[0];
    let (b, ks) = match log_linear(&d.t[m - third..], &d.y[m - third..]) {
        Some((b, k)) if k > 0.0 && k.is_finite() && b.is_finite() => (b, k),
        _ => (0.5 * d.y[0], 1.0 / span),
    };
    let rest: Vec<f64> = (0..third).map(|i| d.y[i] - b * (-ks * d.t[i]).exp()).collect();
    let (a, kf) = match log_linear(&d.t[..third], &rest) {
        Some((a, k)) if k > ks && k.is_finite() && a.is_finite() => (a, k),
        _ => ((d.y[0] - b).max(0.1 * d.y[0].abs()), 5.0 * ks),
    };
    vec![a, kf.ln(), b, ks.ln()]
}

/// Least-squares fit of `a·exp(−t/T2_f) + b·exp(−t/T2_s)`, falling back to
/// a single exponential (with `fallback` set) when the components are not
/// separated.
pub fn fit_double_exponential(series: &EchoSeries) -> Result<DecayFit, FitError> {
    let d = FitData::new(series);
    if d.len() < 6 {
        return Err(FitError::TooFewPoints {
            model: FitModel::Double,
            needed: 6,
            got: d.len(),
        });
    }
    if is_constant(&d.y) {
        return Err(FitError::Degenerate("constant series; decay time is infinite".into()));
    }
    let fallback = || -> Result<DecayFit, FitError> {
        let mut f = fit_single_data(&d)?;
        f.fallback = true;
        Ok(f)
    };
    let sol = levenberg_marquardt(double_model, double_start(&d), &d);
    let p = &sol.params;
    let (mut a, mut kf, mut b, mut ks) = (p[0], p[1].exp(), p[2], p[3].exp());
    if ![a, kf, b, ks].iter().all(|x| x.is_finite()) || kf == 0.0 || ks == 0.0 {
        return fallback();
    }
    if kf < ks {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut kf, &mut ks);
    }
    let (tf, ts) = (1.0 / kf, 1.0 / ks);
    let minor = a.abs().min(b.abs()) / (a.abs() + b.abs());
    if tf / ts > SEPARATION_RATIO || minor < MIN_COMPONENT_FRACTION || !ts.is_finite() {
        return fallback();
    }
    Ok(DecayFit {
        model: FitModel::Double,
        a,
        t2_fast: tf,
        b,
        t2_slow: ts,
        residual: sol.cost.sqrt(),
        converged: sol.converged,
        fallback: false,
        iterations: sol.iterations,
        excluded_points: d.excluded,
        weighted: d.weighted,
    })
}

pub fn fit(series: &EchoSeries, model: FitModel) -> Result<DecayFit, FitError> {
    match model {
        FitModel::Single => fit_single_exponential(series),
        FitModel::Double => fit_double_exponential(series),
    }
}

/// One (sequence, τ) row of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub sequence: SequenceKind,
    pub tau: f64,
    /// Fit averaged over the preparations, or the reason the row failed.
    pub fit: Result<DecayFit, String>,
}

/// Averages fits of the same model parameter by parameter.
fn average_fits(fits: &[DecayFit]) -> DecayFit {
    let n = fits.len() as f64;
    let mean = |f: fn(&DecayFit) -> f64| fits.iter().map(f).sum::<f64>() / n;
    DecayFit {
        model: fits[0].model,
        a: mean(|f| f.a),
        t2_fast: mean(|f| f.t2_fast),
        b: mean(|f| f.b),
        t2_slow: mean(|f| f.t2_slow),
        residual: fits.iter().map(|f| f.residual * f.residual).sum::<f64>().sqrt(),
        converged: fits.iter().all(|f| f.converged),
        fallback: fits.iter().any(|f| f.fallback),
        iterations: fits.iter().map(|f| f.iterations).max().unwrap_or(0),
        excluded_points: fits.iter().map(|f| f.excluded_points).sum(),
        weighted: fits.iter().all(|f| f.weighted),
    }
}

fn scan_row(base: &ExperimentConfig, kind: SequenceKind, tau: f64, model: FitModel) -> Result<DecayFit, String> {
    let mut series = Vec::new();
    for state in kind.scan_initial_states() {
        let cfg = ExperimentConfig {
            sequence: kind,
            tau,
            initial_state: state,
            ..base.clone()
        };
        series.push(run_ensemble(&cfg).map_err(|e| e.to_string())?);
    }
    // Too short for two components (long cycles, or a signal lost in a few
    // cycles): report the single fit, flagged as a fallback.
    let fit_row = |s: &EchoSeries| match fit(s, model) {
        Err(FitError::TooFewPoints {
            model: FitModel::Double,
            ..
        }) => fit_single_exponential(s).map(|mut f| {
            f.fallback = true;
            f
        }),
        other => other,
    };
    let fits: Result<Vec<DecayFit>, FitError> = series.iter().map(fit_row).collect();
    let mut fits = fits.map_err(|e| e.to_string())?;
    // Mixed outcomes (one preparation fell back) are averaged as single fits.
    if fits.iter().any(|f| f.model != fits[0].model) {
        fits = series
            .iter()
            .map(|s| {
                fit_single_exponential(s).map(|mut f| {
                    f.fallback = true;
                    f
                })
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
    }
    Ok(average_fits(&fits))
}

/// Decay times for every `(sequence, τ)` pair, ordered by sequence then τ.
///
/// Sequences other than CP and CPMG are run from both transverse
/// preparations and their fitted parameters averaged. A failing row is
/// reported in place without stopping the scan.
pub fn decay_vs_tau_scan(
    base: &ExperimentConfig,
    sequences: &[SequenceKind],
    taus: &[f64],
    model: FitModel,
) -> Vec<ScanRow> {
    let mut rows = Vec::with_capacity(sequences.len() * taus.len());
    for &kind in sequences {
        for &tau in taus {
            let fit = if tau > 0.0 && tau.is_finite() {
                scan_row(base, kind, tau, model)
            } else {
                Err(format!("tau must be positive, got {tau}"))
            };
            rows.push(ScanRow {
                sequence: kind,
                tau,
                fit,
            });
        }
    }
    rows
}
