// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Ensemble runs through the public API, checked against explicit
//! propagator products.

use std::f64::consts::PI;

use ddsim_core::experiment::{run_ensemble, run_trajectory, ExperimentConfig};
use ddsim_core::noise::NoiseModel;
use ddsim_core::pulse::PulseMode;
use ddsim_core::sequence::{build_cycle, SequenceKind};
use ddsim_core::spin::{rotation_propagator, z_rotation, QubitOperator};
use proptest::prelude::*;

/// Echo amplitudes for a fixed offset with delta pulses, built element by
/// element from the sequence's phase list. Hahn points are independent
/// single echoes of length `k·τ`.
fn oracle(kind: SequenceKind, tau: f64, eps: f64, offset: f64, cycles: usize) -> Vec<f64> {
    let phases = kind.phases();
    let n = phases.len();
    let free = |t: f64| z_rotation(offset * t);
    let prep = kind.default_initial_state();
    let (rho0, obs) = (prep.state(), prep.observable());
    if kind == SequenceKind::Hahn {
        let r = rotation_propagator(phases[0], (1.0 + eps) * PI);
        let ideal = rotation_propagator(phases[0], PI);
        let o = ideal * obs * ideal.dagger();
        return (0..=cycles)
            .map(|k| {
                if k == 0 {
                    return 1.0;
                }
                let half = 0.5 * k as f64 * tau;
                rho0.evolve(&(free(half) * r * free(half))).magnetization(&o)
            })
            .collect();
    }
    let mut u_cycle = QubitOperator::identity();
    let mut ideal = QubitOperator::identity();
    if kind.is_time_symmetric() {
        u_cycle = free(0.5 * tau) * u_cycle;
        for (i, &p) in phases.iter().enumerate() {
            u_cycle = rotation_propagator(p, (1.0 + eps) * PI) * u_cycle;
            ideal = rotation_propagator(p, PI) * ideal;
            u_cycle = free(if i + 1 == n { 0.5 * tau } else { tau }) * u_cycle;
        }
    } else {
        for &p in &phases {
            u_cycle = free(tau) * rotation_propagator(p, (1.0 + eps) * PI) * u_cycle;
            ideal = rotation_propagator(p, PI) * ideal;
        }
    }
    let (mut u, mut v) = (QubitOperator::identity(), QubitOperator::identity());
    let mut out = vec![1.0];
    for _ in 0..cycles {
        u = u_cycle * u;
        v = ideal * v;
        out.push(rho0.evolve(&u).magnetization(&(v * obs * v.dagger())));
    }
    out
}

fn any_kind() -> impl Strategy<Value = SequenceKind> {
    prop::sample::select(SequenceKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_realization_matches_propagator_product(
        kind in any_kind(),
        tau in 1e-5f64..2e-3,
        eps in -0.05f64..0.05,
        seed in any::<u64>(),
    ) {
        let cycles = 12;
        let cycle = build_cycle(kind, tau, &Default::default(), PulseMode::Delta).unwrap();
        let mut cfg = ExperimentConfig {
            noise: NoiseModel {
                sigma_static: 300.0,
                ..NoiseModel::noiseless().with_seed(seed)
            },
            ..ExperimentConfig::new(kind, tau, cycles as f64 * cycle.cycle_time)
        };
        cfg.pulse.flip_error = eps;
        let offset = cfg.noise.sample_static_offset(0);
        let got = run_trajectory(&cfg, 0).unwrap();
        let want = oracle(kind, tau, eps, offset, cycles);
        prop_assert_eq!(got.len(), want.len());
        for (a, b) in got.amplitudes.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn static_offsets_are_refocused(kind in any_kind(), tau in 1e-5f64..2e-3, seed in any::<u64>()) {
        let cfg = ExperimentConfig {
            noise: NoiseModel {
                sigma_static: 2000.0,
                ..NoiseModel::noiseless().with_seed(seed)
            },
            realizations: 16,
            ..ExperimentConfig::new(kind, tau, 0.05)
        };
        let s = run_ensemble(&cfg).unwrap();
        for a in &s.amplitudes {
            prop_assert!((a - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn amplitudes_stay_bounded(kind in any_kind(), eps in -0.1f64..0.1, seed in any::<u64>()) {
        let mut cfg = ExperimentConfig {
            noise: NoiseModel::calibrated().with_seed(seed),
            realizations: 8,
            flip_error_spread: 0.05,
            ..ExperimentConfig::new(kind, 5e-4, 0.05)
        };
        cfg.pulse.flip_error = eps;
        let s = run_ensemble(&cfg).unwrap();
        prop_assert_eq!(s.amplitudes[0], 1.0);
        for w in s.times.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        for a in &s.amplitudes {
            prop_assert!(a.abs() <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn ensemble_does_not_depend_on_thread_count() {
    let mut cfg = ExperimentConfig {
        noise: NoiseModel::calibrated(),
        realizations: 300,
        flip_error_spread: 0.05,
        ..ExperimentConfig::new(SequenceKind::Xy8a, 2e-4, 0.05)
    };
    cfg.pulse.flip_error = 0.01;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&cfg).unwrap())
    };
    let one = run(1);
    for threads in [2, 5] {
        let other = run(threads);
        assert_eq!(one.amplitudes, other.amplitudes);
        assert_eq!(one.std_errors, other.std_errors);
    }
}

#[test]
fn seeds_select_independent_ensembles() {
    let cfg = |seed| ExperimentConfig {
        noise: NoiseModel::calibrated().with_seed(seed),
        realizations: 64,
        ..ExperimentConfig::new(SequenceKind::Cpmg, 1e-3, 0.1)
    };
    let a = run_ensemble(&cfg(1)).unwrap();
    let b = run_ensemble(&cfg(1)).unwrap();
    let c = run_ensemble(&cfg(2)).unwrap();
    assert_eq!(a.amplitudes, b.amplitudes);
    assert_ne!(a.amplitudes, c.amplitudes);
}
