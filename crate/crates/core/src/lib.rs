// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Single-spin dynamical-decoupling simulator.
//!
//! A spin-1/2 in the rotating frame is driven by trains of imperfect π pulses
//! while a classical random field (static offset plus Ornstein-Uhlenbeck
//! fluctuations) shifts its precession frequency. The crate provides the
//! exact propagators, the noise model, the pulse sequences, an average
//! Hamiltonian analysis of flip-angle errors, Monte Carlo echo experiments and
//! exponential decay fits.

pub mod aht;
pub mod experiment;
pub mod fitting;
pub mod noise;
pub mod pulse;
pub mod sequence;
pub mod spin;

pub use aht::{eps_expansion, magnus_terms, toggling_frame, AhtError, MagnusResult};
pub use noise::{NoiseError, NoiseModel, NoiseTrajectory};
pub use pulse::{imperfect_pulse, PulseError, PulseMode, PulseSpec};
pub use sequence::{build_cycle, InitialState, SequenceCycle, SequenceError, SequenceKind};
pub use spin::{effective_hamiltonian, QubitOperator, QubitState, SpinError};
