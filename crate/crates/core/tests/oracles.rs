use popforce_core::cpg::{coupled_step, phase_filter, wrap_pi, GaitDefinition, Leg, OscillatorState};
use popforce_core::interface::{readout_update, Integrator, MonitorBank};
use popforce_core::spiking::{LifParams, LifState, Propagator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

/// Time from reset to threshold under constant current, ms.
fn charge_time(p: &LifParams, current: f64) -> f64 {
    let v_inf = p.steady_state(current);
    p.tau_membrane * ((v_inf - p.v_reset) / (v_inf - p.v_threshold)).ln()
}

#[test]
fn firing_period_matches_closed_form_within_one_step() {
    let p = LifParams::default();
    for &current in &[0.12, 0.2, 0.5, 1.0, 3.0] {
        let prop = Propagator::new(&p, 1.0).unwrap();
        let mut s = LifState::at_rest(&p);
        let mut spikes = Vec::new();
        for k in 0..5000 {
            if prop.advance(&mut s, current) {
                spikes.push(k);
            }
        }
        assert!(spikes.len() > 3, "current {current} should fire");
        let expected = p.t_refractory + charge_time(&p, current);
        for w in spikes.windows(2).skip(1) {
            let period = (w[1] - w[0]) as f64;
            assert!(
                (period - expected).abs() <= 1.0,
                "current {current}: period {period} vs {expected}"
            );
        }
    }
}

#[test]
fn subthreshold_dc_never_fires() {
    let p = LifParams::default();
    // threshold is 15 mV above rest: I * R must stay below that
    let current = 0.99 * (p.v_threshold - p.v_rest) / p.resistance();
    let prop = Propagator::new(&p, 1.0).unwrap();
    let mut s = LifState::at_rest(&p);
    for _ in 0..10_000 {
        assert!(!prop.advance(&mut s, current));
    }
    assert!((s.v - p.steady_state(current)).abs() < 1e-6);
}

#[test]
fn readout_of_monitors_equals_weighted_spike_integration() {
    let params = LifParams::integrator();
    let n = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut bank = MonitorBank::new(n, &params, 1.0).unwrap();
    let mut direct = Integrator::new(&params, 1.0).unwrap();
    for _ in 0..3000 {
        let counts: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let weighted: f64 = counts.iter().zip(&weights).map(|(&c, w)| c as f64 * w).sum();
        let v_direct = direct.step(weighted);
        let x = bank.monitor_update(&counts).unwrap();
        let v_sum = readout_update(&weights, x).unwrap();
        assert!((v_direct - v_sum).abs() <= 1e-9 * (1.0 + v_direct.abs()), "{v_direct} vs {v_sum}");
    }
}

#[test]
fn phase_filter_boundary_gives_pi_from_both_branches() {
    for &d in &[0.15, 0.25, 0.5, 0.75, 0.85] {
        let boundary = TAU * d;
        let lower = boundary / (2.0 * d);
        let upper = (boundary + TAU * (1.0 - 2.0 * d)) / (2.0 * (1.0 - d));
        assert!((lower - PI).abs() < 1e-12);
        assert!((upper - PI).abs() < 1e-12);
        assert!((phase_filter(boundary, d).unwrap() - PI).abs() < 1e-12);
        let eps = 1e-9;
        let below = phase_filter(boundary - eps, d).unwrap();
        let above = phase_filter(boundary + eps, d).unwrap();
        assert!((above - below).abs() < 1e-8);
        assert!(phase_filter(0.0, d).unwrap().abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn phase_filter_is_monotone_and_continuous(d in 0.05f64..0.95, a in 0.0f64..TAU, b in 0.0f64..TAU) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let fl = phase_filter(lo, d).unwrap();
        let fh = phase_filter(hi, d).unwrap();
        prop_assert!(fl <= fh + 1e-12);
        // slope is bounded by the steeper branch
        let lip = 1.0 / (2.0 * d.min(1.0 - d));
        prop_assert!(fh - fl <= lip * (hi - lo) + 1e-9);
        prop_assert!((0.0..TAU + 1e-12).contains(&fl));
    }

    #[test]
    fn phase_filter_wraps_with_period(d in 0.05f64..0.95, phi in -20.0f64..20.0) {
        let a = phase_filter(phi, d).unwrap();
        let b = phase_filter(phi + TAU, d).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn coupled_oscillators_lock_to_walking_offsets() {
    let gait = GaitDefinition::walking();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let mut s: [OscillatorState; 4] = std::array::from_fn(|_| OscillatorState {
            r: rng.random_range(5.0..40.0),
            phi: rng.random_range(0.0..TAU),
        });
        let dt = 1e-3;
        for _ in 0..30_000 {
            s = coupled_step(&s, &gait, dt);
        }
        for (leg, po) in [(Leg::FrontRight, 180.0), (Leg::HindLeft, 270.0), (Leg::HindRight, 90.0)] {
            let diff = wrap_pi(s[0].phi - s[leg.index()].phi - f64::to_radians(po)).to_degrees();
            assert!(diff.abs() < 1.0, "{leg:?} off by {diff} deg");
        }
        for leg in Leg::ALL {
            let r = s[leg.index()].r;
            assert!((r - 30.0).abs() < 1e-3, "radius {r}");
        }
    }
}
