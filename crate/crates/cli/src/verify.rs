// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Comparison of computed average Hamiltonians with their closed forms.
//!
//! Coefficients are reported in units of `ε^{k+1}/τ` for order `k`, so a
//! row for XY4 compares the `S_z` part of the first-order term, times
//! `τ/ε²`, with `5π²/16`. Rows whose closed form is zero compare the norm of
//! the whole term, in units of `π/τ`, against an absolute tolerance.

use std::f64::consts::PI;

use ddsim_core::aht::{eps_expansion, magnus_terms, AhtError, DEFAULT_EPS_SAMPLES};
use ddsim_core::pulse::{PulseMode, PulseSpec};
use ddsim_core::sequence::{build_cycle, SequenceKind};

/// Which part of the term a row checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    X,
    Y,
    Z,
    /// Norm of the spin vector.
    Norm,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Self::X => "Sx",
            Self::Y => "Sy",
            Self::Z => "Sz",
            Self::Norm => "|H|",
        }
    }

    fn of(self, v: [f64; 3]) -> f64 {
        match self {
            Self::X => v[0],
            Self::Y => v[1],
            Self::Z => v[2],
            Self::Norm => (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(),
        }
    }
}

/// Expected value of one term component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForm {
    pub sequence: SequenceKind,
    pub order: usize,
    pub component: Component,
    /// Coefficient of `ε^{order+1}/τ`; zero for vanishing terms.
    pub coefficient: f64,
    /// Relative tolerance for nonzero coefficients, absolute (in units of
    /// `π/τ`) for zero ones.
    pub tolerance: f64,
}

/// The closed forms checked by `aht-verify`.
pub fn closed_forms() -> Vec<ClosedForm> {
    let xy4 = 5.0 * PI * PI / 16.0;
    let xy8 = 13.0 * PI.powi(3) / 1536.0;
    let row = |sequence, order, component, coefficient, tolerance| ClosedForm {
        sequence,
        order,
        component,
        coefficient,
        tolerance,
    };
    vec![
        row(SequenceKind::Cpmg, 0, Component::Y, PI, 1e-3),
        row(SequenceKind::Cpmg, 1, Component::Norm, 0.0, 1e-8),
        row(SequenceKind::Xy4s, 1, Component::Z, xy4, 1e-3),
        row(SequenceKind::Xy4a, 1, Component::Z, xy4, 1e-3),
        row(SequenceKind::Xy8s, 2, Component::X, xy8, 5e-3),
        row(SequenceKind::Xy8s, 2, Component::Y, xy8, 5e-3),
        row(SequenceKind::Xy8a, 2, Component::X, xy8, 5e-3),
        row(SequenceKind::Xy8a, 2, Component::Y, xy8, 5e-3),
        row(SequenceKind::KddX, 0, Component::Norm, 0.0, 1e-8),
        row(SequenceKind::KddX, 1, Component::Norm, 0.0, 1e-8),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub expected: ClosedForm,
    /// Magnus value, in the units of `expected.coefficient` (or `π/τ` for
    /// zero rows).
    pub magnus: f64,
    /// Same quantity from the polynomial fit of the exact effective
    /// Hamiltonian.
    pub expansion: f64,
    /// Relative deviation for nonzero rows, absolute for zero rows.
    pub deviation: f64,
    pub pass: bool,
}

/// Evaluates every closed form at flip error `eps` and delay `tau`.
pub fn verify(eps: f64, tau: f64) -> Result<Vec<VerifyRow>, AhtError> {
    let mut rows = Vec::new();
    for expected in closed_forms() {
        let cycle = build_cycle(expected.sequence, tau, &PulseSpec::default(), PulseMode::Delta)
            .expect("catalog cycle with positive delay");
        let m = magnus_terms(&cycle, eps, 2)?;
        let fit = eps_expansion(&cycle, &DEFAULT_EPS_SAMPLES, 5)?;
        let k = expected.order;
        let term = m.terms[k].spin_vector();
        let coef = fit.coefficients[k];
        let (magnus, expansion, deviation) = if expected.coefficient == 0.0 {
            // Size of the whole term at this ε, in units of π/τ.
            let magnus = expected.component.of(term) * tau / PI;
            let expansion = expected.component.of(coef) * eps.powi(k as i32 + 1) * tau / PI;
            (magnus, expansion, magnus.abs())
        } else {
            let scale = tau / eps.powi(k as i32 + 1);
            let magnus = expected.component.of(term) * scale;
            let expansion = expected.component.of(coef) * tau;
            (magnus, expansion, (magnus - expected.coefficient).abs() / expected.coefficient.abs())
        };
        rows.push(VerifyRow {
            expected,
            magnus,
            expansion,
            deviation,
            pass: deviation < expected.tolerance,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_is_evaluated() {
        let rows = verify(0.01, 1e-4).unwrap();
        assert_eq!(rows.len(), closed_forms().len());
        for r in &rows {
            assert!(r.magnus.is_finite() && r.expansion.is_finite());
        }
    }

    #[test]
    fn magnus_and_expansion_agree_on_nonzero_rows() {
        for r in verify(0.01, 1e-4).unwrap() {
            if r.expected.coefficient != 0.0 {
                let rel = (r.magnus - r.expansion).abs() / r.magnus.abs();
                assert!(rel < 5e-3, "{:?}", r);
            }
        }
    }

    #[test]
    fn coefficients_do_not_depend_on_tau() {
        let a = verify(0.01, 1e-4).unwrap();
        let b = verify(0.01, 3e-3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            if x.expected.coefficient != 0.0 {
                assert!((x.magnus - y.magnus).abs() < 1e-9 * x.magnus.abs());
            }
        }
    }
}
