// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Exact 2×2 complex linear algebra for a single spin-1/2.
//!
//! Spin operators are normalized as `S_k = σ_k / 2`, so a π rotation about the
//! in-plane axis at azimuth φ is `exp(-iπ S_φ)`. All dynamics are expressed in
//! the frame rotating at the Zeeman frequency; the Zeeman term `ω_s S_z` itself
//! never enters an observable and is not represented.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Distance from π below which the principal logarithm of a rotation is
/// considered ambiguous.
pub const BRANCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("rotation angle {angle} is within {BRANCH_TOLERANCE} of π; effective Hamiltonian is ambiguous")]
    BranchAmbiguity { angle: f64 },
    #[error("cycle time must be positive and finite, got {0}")]
    InvalidCycleTime(f64),
}

/// A linear operator on the qubit Hilbert space, stored row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct QubitOperator {
    m: [[C64; 2]; 2],
}

impl fmt::Debug for QubitOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}

impl QubitOperator {
    pub const fn new(m: [[C64; 2]; 2]) -> Self {
        Self { m }
    }

    pub const fn identity() -> Self {
        Self::new([[ONE, ZERO], [ZERO, ONE]])
    }

    pub const fn zero() -> Self {
        Self::new([[ZERO, ZERO], [ZERO, ZERO]])
    }

    pub fn sx() -> Self {
        Self::new([[ZERO, C64::new(0.5, 0.0)], [C64::new(0.5, 0.0), ZERO]])
    }

    pub fn sy() -> Self {
        Self::new([[ZERO, C64::new(0.0, -0.5)], [C64::new(0.0, 0.5), ZERO]])
    }

    pub fn sz() -> Self {
        Self::new([[C64::new(0.5, 0.0), ZERO], [ZERO, C64::new(-0.5, 0.0)]])
    }

    /// In-plane spin operator `cos φ S_x + sin φ S_y`.
    pub fn s_phi(phase: f64) -> Self {
        Self::from_spin_vector([phase.cos(), phase.sin(), 0.0])
    }

    /// `h_x S_x + h_y S_y + h_z S_z`.
    pub fn from_spin_vector(h: [f64; 3]) -> Self {
        let [x, y, z] = h;
        Self::new([
            [C64::new(0.5 * z, 0.0), C64::new(0.5 * x, -0.5 * y)],
            [C64::new(0.5 * x, 0.5 * y), C64::new(-0.5 * z, 0.0)],
        ])
    }

    /// Coefficients `(h_x, h_y, h_z)` of the traceless part in the spin basis,
    /// i.e. `h_k = 2 Re Tr(A S_k)`.
    pub fn spin_vector(&self) -> [f64; 3] {
        let m = &self.m;
        [
            (m[0][1] + m[1][0]).re,
            (m[1][0] - m[0][1]).im,
            (m[0][0] - m[1][1]).re,
        ]
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.m[row][col]
    }

    pub fn entries(&self) -> [[C64; 2]; 2] {
        self.m
    }

    pub fn trace(&self) -> C64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn det(&self) -> C64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Self::new([
            [m[0][0].conj(), m[1][0].conj()],
            [m[0][1].conj(), m[1][1].conj()],
        ])
    }

    pub fn scale(&self, c: C64) -> Self {
        let m = &self.m;
        Self::new([
            [m[0][0] * c, m[0][1] * c],
            [m[1][0] * c, m[1][1] * c],
        ])
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Identity component removed: `A - Tr(A)/2 · 1`.
    pub fn traceless(&self) -> Self {
        let half = self.trace() * 0.5;
        *self - Self::identity().scale(half)
    }

    /// `‖U†U − 1‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        (self.dagger() * *self - Self::identity()).frobenius_norm()
    }

    /// `‖A − A†‖_F`.
    pub fn hermiticity_defect(&self) -> f64 {
        (*self - self.dagger()).frobenius_norm()
    }

    /// Global-phase-insensitive overlap `|Tr(U†V)| / 2`; equals 1 iff the two
    /// unitaries agree up to a phase.
    pub fn phase_insensitive_overlap(&self, other: &Self) -> f64 {
        (self.dagger() * *other).trace().norm() / 2.0
    }

    /// `exp(-i t H)` for a Hermitian generator with real spin vector `h`,
    /// evaluated in closed form: `cos(|h|t/2) − i sin(|h|t/2) ĥ·σ`.
    pub fn exp_spin(h: [f64; 3], t: f64) -> Self {
        let norm = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
        let half = 0.5 * norm * t;
        let c = half.cos();
        // sin(|h|t/2)/|h| with the removable singularity handled.
        let s = if norm * t.abs() > 1e-300 {
            half.sin() / norm
        } else {
            0.5 * t
        };
        let [x, y, z] = h;
        Self::new([
            [C64::new(c, -s * z), C64::new(-s * y, -s * x)],
            [C64::new(s * y, -s * x), C64::new(c, s * z)],
        ])
    }

    /// `exp(-i t H)` for a Hermitian operator; any identity component of `H`
    /// contributes a global phase.
    pub fn exp_hermitian(&self, t: f64) -> Self {
        let phase = self.trace().re * 0.5 * t;
        Self::exp_spin(self.spin_vector(), t).scale(C64::from_polar(1.0, -phase))
    }
}

impl Mul for QubitOperator {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let a = &self.m;
        let b = &rhs.m;
        Self::new([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

impl Add for QubitOperator {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        let mut m = self.m;
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += rhs.m[r][c];
            }
        }
        Self::new(m)
    }
}

impl Sub for QubitOperator {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for QubitOperator {
    type Output = Self;

    fn neg(self) -> Self {
        self.scale_re(-1.0)
    }
}

/// Ideal rotation `exp(-i·angle·S_φ)` about the in-plane axis at azimuth `phase`.
pub fn rotation_propagator(phase: f64, angle: f64) -> QubitOperator {
    QubitOperator::exp_spin([phase.cos(), phase.sin(), 0.0], angle)
}

/// Free precession `exp(-i·phi·S_z)` by an accumulated phase `phi`.
pub fn z_rotation(phi: f64) -> QubitOperator {
    let half = 0.5 * phi;
    QubitOperator::new([
        [C64::from_polar(1.0, -half), ZERO],
        [ZERO, C64::from_polar(1.0, half)],
    ])
}

/// Rotation angle in `[0, π]` and unit axis of a unitary, up to global phase.
///
/// Returns `(angle, axis)`; for the identity the axis is `[0, 0, 1]`.
pub fn rotation_angle_axis(u: &QubitOperator) -> (f64, [f64; 3]) {
    // Project onto SU(2) and pick the sign with non-negative trace so that the
    // rotation angle lies in [0, π].
    let root = u.det().sqrt();
    let mut v = u.scale(root.inv());
    if v.trace().re < 0.0 {
        v = -v;
    }
    let c = 0.5 * v.trace().re;
    // v = c·1 − i·sin(θ/2)·n·σ, so sin(θ/2)·n_k = (i/2)·Tr(v σ_k) = −Im(...)
    let m = v.entries();
    let sx = -0.5 * (m[0][1] + m[1][0]).im;
    let sy = 0.5 * (m[1][0] - m[0][1]).re;
    let sz = -0.5 * (m[0][0] - m[1][1]).im;
    let s = (sx * sx + sy * sy + sz * sz).sqrt();
    let angle = 2.0 * s.atan2(c.max(0.0));
    if s == 0.0 {
        (angle, [0.0, 0.0, 1.0])
    } else {
        (angle, [sx / s, sy / s, sz / s])
    }
}

/// Traceless Hermitian `H` with `exp(-i H τ_c) = U` up to a global phase,
/// using the principal branch of the logarithm.
pub fn effective_hamiltonian(u: &QubitOperator, cycle_time: f64) -> Result<QubitOperator, SpinError> {
    if !(cycle_time > 0.0 && cycle_time.is_finite()) {
        return Err(SpinError::InvalidCycleTime(cycle_time));
    }
    let (angle, axis) = rotation_angle_axis(u);
    if PI - angle < BRANCH_TOLERANCE {
        return Err(SpinError::BranchAmbiguity { angle });
    }
    let rate = angle / cycle_time;
    Ok(QubitOperator::from_spin_vector([
        rate * axis[0],
        rate * axis[1],
        rate * axis[2],
    ]))
}

/// Density matrix of a single qubit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitState {
    rho: QubitOperator,
}

impl QubitState {
    /// State with Bloch vector `r` (`|r| ≤ 1`): `ρ = 1/2 + r·S`.
    pub fn from_bloch(r: [f64; 3]) -> Self {
        let rho = QubitOperator::identity().scale_re(0.5) + QubitOperator::from_spin_vector(r);
        Self { rho }
    }

    pub fn plus_x() -> Self {
        Self::from_bloch([1.0, 0.0, 0.0])
    }

    pub fn plus_y() -> Self {
        Self::from_bloch([0.0, 1.0, 0.0])
    }

    pub fn plus_z() -> Self {
        Self::from_bloch([0.0, 0.0, 1.0])
    }

    pub fn maximally_mixed() -> Self {
        Self::from_bloch([0.0; 3])
    }

    /// Wraps an arbitrary operator; caller is responsible for it being a
    /// valid density matrix.
    pub fn from_density_matrix(rho: QubitOperator) -> Self {
        Self { rho }
    }

    pub fn density_matrix(&self) -> &QubitOperator {
        &self.rho
    }

    pub fn bloch_vector(&self) -> [f64; 3] {
        self.rho.spin_vector()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// Eigenvalues of ρ, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [x, y, z] = self.bloch_vector();
        let r = (x * x + y * y + z * z).sqrt();
        let t = self.trace().re;
        [0.5 * (t - r), 0.5 * (t + r)]
    }

    /// `ρ → U ρ U†`.
    pub fn evolve(&self, u: &QubitOperator) -> Self {
        Self {
            rho: *u * self.rho * u.dagger(),
        }
    }

    /// `Tr(ρ A)`, real part. For `A = S_k` this is half the normalized
    /// magnetization along `k`.
    pub fn expectation(&self, a: &QubitOperator) -> f64 {
        (self.rho * *a).trace().re
    }

    /// Normalized magnetization `2 Tr(ρ A)`, equal to 1 for a fully polarized
    /// state along `A` when `A` is a unit spin operator.
    pub fn magnetization(&self, a: &QubitOperator) -> f64 {
        2.0 * self.expectation(a)
    }
}
