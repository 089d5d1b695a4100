// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Average Hamiltonian theory for flip-angle errors.
//!
//! Each imperfect pulse `exp(-i(1+ε)πS_φ)` is split into a half-kick of area
//! `επ/2` along `S_φ`, the ideal π rotation and a second half-kick. Moving to
//! the toggling frame of the ideal pulses turns every kick into a rotated
//! spin operator; with no environmental noise the delays carry no
//! Hamiltonian. The Magnus series of the resulting piecewise-constant
//! generator is evaluated exactly as nested sums over segments.
//!
//! Orders are labelled as average Hamiltonians: order `k` is
//! `(i/τ_c)·Ω_{k+1}` and scales as `ε^{k+1}`.
//!
//! [`eps_expansion`] is an independent route to the same coefficients: it
//! takes the principal logarithm of the exact cycle propagator for several
//! values of ε and fits each spin component to a polynomial in ε.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::pulse::PulseMode;
use crate::sequence::{Element, SequenceCycle};
use crate::spin::{effective_hamiltonian, rotation_propagator, QubitOperator, SpinError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AhtError {
    #[error("average Hamiltonian analysis needs delta pulses; cycle '{0}' uses finite pulses")]
    FiniteDuration(String),
    #[error("Magnus order {0} is not supported (max 2)")]
    UnsupportedOrder(usize),
    #[error("cycle time must be positive, got {0} s")]
    ZeroCycleTime(f64),
    #[error("polynomial fit in ε is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// One piece of the toggling-frame Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToggledSegment {
    /// Constant Hamiltonian over a finite interval.
    Interval {
        hamiltonian: QubitOperator,
        duration: f64,
    },
    /// Instantaneous kick `exp(-i·area)`; `area` is the time-integrated
    /// Hamiltonian.
    Kick { area: QubitOperator },
}

impl ToggledSegment {
    /// Time-integrated Hamiltonian `∫H dt` of the segment.
    pub fn area(&self) -> QubitOperator {
        match self {
            Self::Interval {
                hamiltonian,
                duration,
            } => hamiltonian.scale_re(*duration),
            Self::Kick { area } => *area,
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            Self::Interval { duration, .. } => *duration,
            Self::Kick { .. } => 0.0,
        }
    }
}

/// Toggling-frame representation of one cycle with flip-angle error `ε` on
/// every pulse (overriding the cycle's own pulse errors).
pub fn toggling_frame(cycle: &SequenceCycle, flip_error: f64) -> Result<Vec<ToggledSegment>, AhtError> {
    if cycle.mode != PulseMode::Delta {
        return Err(AhtError::FiniteDuration(cycle.label().to_string()));
    }
    let mut frame = QubitOperator::identity();
    let mut out = Vec::with_capacity(2 * cycle.elements.len());
    for e in &cycle.elements {
        match e {
            Element::Delay(d) => out.push(ToggledSegment::Interval {
                hamiltonian: QubitOperator::zero(),
                duration: *d,
            }),
            Element::Pulse(p) => {
                let half = 0.5 * flip_error * p.nominal_angle;
                let kick = QubitOperator::s_phi(p.phase).scale_re(half);
                // Before the ideal rotation the kick sees the current frame;
                // after it, the frame including this pulse.
                out.push(ToggledSegment::Kick {
                    area: frame.dagger() * kick * frame,
                });
                frame = rotation_propagator(p.phase, p.nominal_angle) * frame;
                out.push(ToggledSegment::Kick {
                    area: frame.dagger() * kick * frame,
                });
            }
        }
    }
    Ok(out)
}

/// Average Hamiltonian terms of orders `0..=max_order` (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct MagnusResult {
    pub terms: Vec<QubitOperator>,
    pub cycle_time: f64,
    pub flip_error: f64,
    /// How the pulses were split into kicks.
    pub convention: &'static str,
}

pub const KICK_CONVENTION: &str =
    "half-kick / ideal pulse / half-kick, each kick of area επ/2 along the pulse axis";

impl MagnusResult {
    /// Sum of all computed terms.
    pub fn total(&self) -> QubitOperator {
        self.terms
            .iter()
            .fold(QubitOperator::zero(), |acc, t| acc + *t)
    }
}

/// Magnus terms of the toggling-frame Hamiltonian, evaluated exactly for
/// piecewise-constant segments.
///
/// With `a_k = -i∫H_k` for segment `k` (time-ordered):
/// - `Ω1 = Σ a_k`
/// - `Ω2 = ½ Σ_{j>k} [a_j, a_k]`
/// - `Ω3 = ⅙ Σ_{j>k>l} ([a_j,[a_k,a_l]] + [a_l,[a_k,a_j]])
///        + 1/12 Σ_{j>k} ([a_j,[a_j,a_k]] + [a_k,[a_k,a_j]])`
///
/// and the average Hamiltonian of order `n` is `(i/τ_c)·Ω_{n+1}`.
pub fn magnus_terms(cycle: &SequenceCycle, flip_error: f64, max_order: usize) -> Result<MagnusResult, AhtError> {
    if max_order > 2 {
        return Err(AhtError::UnsupportedOrder(max_order));
    }
    let segments = toggling_frame(cycle, flip_error)?;
    let tau_c = cycle.cycle_time;
    if !(tau_c > 0.0) {
        return Err(AhtError::ZeroCycleTime(tau_c));
    }
    let minus_i = C64::new(0.0, -1.0);
    let a: Vec<QubitOperator> = segments
        .iter()
        .map(|s| s.area())
        .filter(|x| x.frobenius_norm() > 0.0)
        .map(|x| x.scale(minus_i))
        .collect();

    let mut omegas = Vec::with_capacity(3);
    omegas.push(a.iter().fold(QubitOperator::zero(), |acc, x| acc + *x));

    if max_order >= 1 {
        // prefix[k] = Σ_{l<k} a_l
        let mut omega2 = QubitOperator::zero();
        let mut prefix = QubitOperator::zero();
        for x in &a {
            omega2 = omega2 + x.commutator(&prefix);
            prefix = prefix + *x;
        }
        omegas.push(omega2.scale_re(0.5));
    }

    if max_order >= 2 {
        let n = a.len();
        let mut triple = QubitOperator::zero();
        // Σ_{j>k>l} [a_j,[a_k,a_l]] = Σ_k [S_{>k}, [a_k, P_{<k}]]
        // Σ_{j>k>l} [a_l,[a_k,a_j]] = Σ_k [P_{<k}, [a_k, S_{>k}]]
        let total = omegas[0];
        let mut before = QubitOperator::zero();
        for k in 0..n {
            let after = total - before - a[k];
            triple = triple
                + after.commutator(&a[k].commutator(&before))
                + before.commutator(&a[k].commutator(&after));
            before = before + a[k];
        }
        let mut pairs = QubitOperator::zero();
        for j in 0..n {
            for k in 0..j {
                pairs = pairs
                    + a[j].commutator(&a[j].commutator(&a[k]))
                    + a[k].commutator(&a[k].commutator(&a[j]));
            }
        }
        omegas.push(triple.scale_re(1.0 / 6.0) + pairs.scale_re(1.0 / 12.0));
    }

    let to_hamiltonian = C64::new(0.0, 1.0 / tau_c);
    let terms = omegas
        .into_iter()
        .map(|o| o.scale(to_hamiltonian).traceless())
        .collect();
    Ok(MagnusResult {
        terms,
        cycle_time: tau_c,
        flip_error,
        convention: KICK_CONVENTION,
    })
}

/// Exact noise-free cycle propagator with flip-angle error `ε` on every pulse.
pub fn exact_cycle_propagator(cycle: &SequenceCycle, flip_error: f64) -> Result<QubitOperator, AhtError> {
    if cycle.mode != PulseMode::Delta {
        return Err(AhtError::FiniteDuration(cycle.label().to_string()));
    }
    Ok(cycle
        .pulses()
        .map(|p| rotation_propagator(p.phase, (1.0 + flip_error) * p.nominal_angle))
        .fold(QubitOperator::identity(), |u, r| r * u))
}

/// Polynomial coefficients of the effective Hamiltonian in ε.
///
/// `coefficients[k][c]` multiplies `ε^{k+1}` in spin component `c`
/// (`x, y, z`), in rad/s. There is no constant term: the error-free cycle is
/// the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsExpansion {
    pub coefficients: Vec<[f64; 3]>,
    pub samples: Vec<f64>,
    pub max_residual: f64,
}

impl EpsExpansion {
    pub fn coefficient(&self, power: usize, component: usize) -> f64 {
        self.coefficients[power - 1][component]
    }
}

/// Default ε samples for [`eps_expansion`].
pub const DEFAULT_EPS_SAMPLES: [f64; 6] = [-0.004, -0.002, -0.001, 0.001, 0.002, 0.004];

/// Fits the spin components of `effective_hamiltonian(U_cycle(ε))` to
/// `Σ_{k=1..degree} c_k ε^k` by least squares over `samples`.
pub fn eps_expansion(cycle: &SequenceCycle, samples: &[f64], degree: usize) -> Result<EpsExpansion, AhtError> {
    let mut distinct: Vec<f64> = samples.iter().copied().filter(|e| *e != 0.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if degree == 0 || distinct.len() < degree {
        return Err(AhtError::IllConditioned(format!(
            "{} distinct non-zero samples for {} unknowns",
            distinct.len(),
            degree
        )));
    }
    let rows = samples.len();
    // Columns scaled by the largest |ε| so the design matrix stays O(1).
    let scale = samples.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let design = DMatrix::from_fn(rows, degree, |r, c| (samples[r] / scale).powi(c as i32 + 1));
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > 1e12 {
        return Err(AhtError::IllConditioned(format!("condition number {cond:e}")));
    }

    let mut values = [DVector::zeros(rows), DVector::zeros(rows), DVector::zeros(rows)];
    for (r, &eps) in samples.iter().enumerate() {
        let u = exact_cycle_propagator(cycle, eps)?;
        let h = effective_hamiltonian(&u, cycle.cycle_time)?.spin_vector();
        for c in 0..3 {
            values[c][r] = h[c];
        }
    }
    let mut coefficients = vec![[0.0; 3]; degree];
    let mut max_residual = 0.0f64;
    for c in 0..3 {
        let sol = svd
            .solve(&values[c], 1e-14)
            .map_err(|e| AhtError::IllConditioned(e.to_string()))?;
        let resid = &design * &sol - &values[c];
        max_residual = max_residual.max(resid.amax());
        for k in 0..degree {
            coefficients[k][c] = sol[k] / scale.powi(k as i32 + 1);
        }
    }
    Ok(EpsExpansion {
        coefficients,
        samples: samples.to_vec(),
        max_residual,
    })
}
