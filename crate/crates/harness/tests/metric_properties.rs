use std::f64::consts::TAU;

use popforce_core::cpg::GaitDefinition;
use popforce_harness::config::{ExperimentConfig, ExperimentKind, Scale};
use popforce_harness::metrics::{classify, dominant_frequency, Frame, PhaseAlignedError, Template};
use popforce_harness::report::{Check, Comparison};
use proptest::prelude::*;

/// Four legs with fixed phase offsets, `period` samples per cycle.
fn gait_frames(n: usize, period: usize, shift: f64) -> Vec<Frame> {
    let offsets = [0.0, 0.5, 0.75, 0.25];
    (0..n)
        .map(|k| {
            std::array::from_fn(|i| {
                20.0 * (TAU * ((k as f64 + shift) / period as f64 + offsets[i])).sin() + 30.0
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn delay_inside_the_alignment_window_costs_nothing(period in 200usize..900, frac in -0.45f64..0.45, cycles in 2usize..6) {
        let margin = period;
        let lag = (frac * period as f64).round() as isize;
        let n = cycles * period;
        let reference = gait_frames(n + 2 * margin, period, -(margin as f64));
        let readouts: Vec<Frame> = (0..n)
            .map(|k| reference[(margin as isize + k as isize + lag) as usize])
            .collect();
        let mut acc = PhaseAlignedError::new();
        acc.add(&readouts, &reference, margin, period);
        for v in acc.nrmse().unwrap() {
            prop_assert!(v < 1e-9, "{v}");
        }
    }

    #[test]
    fn amplitude_error_gives_its_relative_size(period in 200usize..900, eps in -0.5f64..0.5, cycles in 1usize..4) {
        let margin = period;
        let n = 2 * cycles * period;
        let reference = gait_frames(n + 2 * margin, period, -(margin as f64));
        let readouts: Vec<Frame> = (0..n)
            .map(|k| {
                let t = reference[margin + k];
                std::array::from_fn(|i| 30.0 + (1.0 + eps) * (t[i] - 30.0))
            })
            .collect();
        let mut acc = PhaseAlignedError::new();
        acc.add(&readouts, &reference, margin, period);
        for v in acc.nrmse().unwrap() {
            prop_assert!((v - eps.abs()).abs() < 1e-9, "{v} vs {eps}");
        }
    }

    #[test]
    fn frequency_of_any_sine(hz in 0.5f64..3.0, phase in 0.0f64..TAU, amp in 0.5f64..50.0, offset in -40.0f64..40.0) {
        let x: Vec<f64> = (0..20_000)
            .map(|k| offset + amp * (TAU * hz * k as f64 * 1e-3 + phase).sin())
            .collect();
        let m = dominant_frequency(&x, 1e-3).unwrap();
        prop_assert!((m / hz - 1.0).abs() < 1e-3, "{m} vs {hz}");
    }

    #[test]
    fn classification_ignores_where_the_window_starts(start in 0usize..3000, bounding in any::<bool>()) {
        let templates = [
            Template::from_gait(&GaitDefinition::walking(), 1.0).unwrap(),
            Template::from_gait(&GaitDefinition::bounding(), 1.0).unwrap(),
        ];
        let gait = if bounding { GaitDefinition::bounding() } else { GaitDefinition::walking() };
        let trace = popforce_core::cpg::target_trajectories(&gait, 20.0, 1.0).unwrap();
        let win = 2 * templates[0].period();
        let from = trace.len() - win - start;
        let frames: Vec<Frame> = (from..from + win).map(|k| trace.at(k)).collect();
        let (cls, scores) = classify(&frames, &templates);
        prop_assert_eq!(cls, usize::from(bounding), "{:?}", scores);
    }

    #[test]
    fn checks_follow_their_comparison(v in -10.0f64..10.0, limit in -10.0f64..10.0) {
        prop_assert_eq!(Check::new("c", v, Comparison::Below, limit).passed, v < limit);
        prop_assert_eq!(Check::new("c", v, Comparison::AtMost, limit).passed, v <= limit);
        prop_assert_eq!(Check::new("c", v, Comparison::Above, limit).passed, v > limit);
    }

    #[test]
    fn seed_manifest_is_a_function_of_the_master_seed(seed in 0u64..(1 << 62)) {
        let mut a = ExperimentConfig::preset(ExperimentKind::GaitGeneration, Scale::Ci);
        a.seed = seed;
        let mut b = a.clone();
        a.resolve_seeds();
        b.resolve_seeds();
        prop_assert_eq!(a.seed_manifest(), b.seed_manifest());
        prop_assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let m = a.seed_manifest();
        for s in [m.reservoir, m.sensor_noise, m.target_noise, m.search] {
            prop_assert!(s <= i64::MAX as u64);
        }
    }
}
