use popforce_core::body::{apply_disturbance, body_step, Body, BodyParams, BodyState, Disturbance};
use popforce_core::cpg::{target_trajectories, GaitDefinition};
use std::f64::consts::TAU;

fn decoupled() -> BodyParams {
    BodyParams {
        contact_enabled: false,
        ..BodyParams::default()
    }
}

/// Knee deflection (rad) and velocity (rad/s) of leg 0 relative to rest.
fn knee_xv(p: &BodyParams, s: &BodyState) -> (f64, f64) {
    (
        (s.knee[0] - p.knee_rest_angle[0]).to_radians(),
        s.knee_velocity[0].to_radians(),
    )
}

#[test]
fn undamped_knee_conserves_discrete_energy_and_damped_knee_loses_it() {
    for damping in [0.0, 0.004, 0.02] {
        let p = BodyParams {
            knee_damping: [damping; 4],
            ..decoupled()
        };
        let mut s = BodyState::at_rest(&p);
        s.knee[0] += 15.0;
        let h = 1e-3 / p.substeps as f64;
        let inertia = p.knee_inertia();
        let k = p.knee_stiffness[0];
        // invariant of the semi-implicit Euler map for the undamped oscillator
        let energy = |s: &BodyState| {
            let (x, v) = knee_xv(&p, s);
            0.5 * inertia * v * v + 0.5 * k * x * x - 0.5 * h * k * x * v
        };
        let e0 = energy(&s);
        let mut prev = e0;
        for _ in 0..5000 {
            s = body_step(&p, &s, &[0.0; 4], 1.0).unwrap();
            let e = energy(&s);
            assert!(e <= prev * (1.0 + 1e-12) + 1e-15, "energy rose: {prev} -> {e}");
            if damping == 0.0 {
                assert!((e - e0).abs() <= 1e-9 * e0);
            }
            prev = e;
        }
        if damping > 0.0 {
            assert!(prev < 0.5 * e0);
        }
    }
}

#[test]
fn decoupled_knee_matches_damped_oscillator() {
    let p = decoupled();
    let inertia = p.knee_inertia();
    let k = p.knee_stiffness[0];
    let c = p.knee_damping[0];
    let sigma = c / (2.0 * inertia);
    let omega_d = (k / inertia - sigma * sigma).sqrt();

    let mut s = BodyState::at_rest(&p);
    s.knee[0] += 20.0;
    let mut xs = Vec::new();
    let mut log_amp = Vec::new();
    for n in 1..=1500 {
        s = body_step(&p, &s, &[0.0; 4], 1.0).unwrap();
        let (x, v) = knee_xv(&p, &s);
        let t = n as f64 * 1e-3;
        xs.push((t, x));
        let a = (x * x + ((v + sigma * x) / omega_d).powi(2)).sqrt();
        log_amp.push((t, a.ln()));
    }

    // period from interpolated upward zero crossings
    let mut ups = Vec::new();
    for w in xs.windows(2) {
        let ((t0, x0), (t1, x1)) = (w[0], w[1]);
        if x0 < 0.0 && x1 >= 0.0 {
            ups.push(t0 + (t1 - t0) * (-x0) / (x1 - x0));
        }
    }
    assert!(ups.len() > 10);
    let measured_period = (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64;
    let analytic_period = TAU / omega_d;
    let freq_err = (measured_period / analytic_period - 1.0).abs();
    assert!(freq_err < 0.005, "frequency error {freq_err}");

    // decay rate from a least-squares fit of the log envelope
    let n = log_amp.len() as f64;
    let mt = log_amp.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = log_amp.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = log_amp.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let den: f64 = log_amp.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let measured_sigma = -num / den;
    let decay_err = (measured_sigma / sigma - 1.0).abs();
    assert!(decay_err < 0.005, "decay error {decay_err}: {measured_sigma} vs {sigma}");
}

/// Hips driven at 1.44 Hz with 700 steps per cycle so the forcing repeats
/// exactly in step count.
#[test]
fn sinusoidal_hips_give_periodic_knees() {
    let p = BodyParams::default();
    let steps = 700usize;
    let dt = 1000.0 / 1.44 / steps as f64;
    let phases = [0.0, 0.5, 0.75, 0.25];
    let mut s = BodyState::at_rest(&p);
    let mut cycles: Vec<Vec<[f64; 4]>> = Vec::new();
    for c in 0..8 {
        let mut cyc = Vec::with_capacity(steps);
        for k in 0..steps {
            let u = k as f64 / steps as f64;
            let cmd = phases.map(|ph| 30.0 * (TAU * (u - ph)).cos());
            s = body_step(&p, &s, &cmd, dt).unwrap();
            cyc.push(s.knee);
        }
        if c >= 5 {
            cycles.push(cyc);
        }
    }
    for w in cycles.windows(2) {
        let mut diff = 0.0;
        let mut power = 0.0;
        let mean: Vec<f64> = (0..4)
            .map(|i| w[0].iter().map(|k| k[i]).sum::<f64>() / steps as f64)
            .collect();
        for (a, b) in w[0].iter().zip(&w[1]) {
            for i in 0..4 {
                diff += (a[i] - b[i]).powi(2);
                power += (a[i] - mean[i]).powi(2);
            }
        }
        let rel = (diff / power).sqrt();
        assert!(rel <= 0.01, "cycle-to-cycle RMS difference {rel}");
    }
}

#[test]
fn walking_gait_moves_forward() {
    let p = BodyParams::default();
    let targets = target_trajectories(&GaitDefinition::walking(), 10.0, 1.0).unwrap();
    let mut body = Body::new(p).unwrap();
    for k in 1..targets.len() {
        body.step(&targets.at(k), 1.0).unwrap();
    }
    let s = body.state();
    assert!(s.x > 0.0);
    let mean_velocity = s.distance_from_origin / 10.0;
    assert!(mean_velocity > 0.01, "mean velocity {mean_velocity}");
    assert!((s.distance_from_origin - s.x.hypot(s.y)).abs() < 1e-12);
}

#[test]
fn knees_stay_within_stops() {
    let p = BodyParams::default();
    let mut body = Body::new(p).unwrap();
    for k in 0..20_000 {
        let t = k as f64 * 1e-3;
        // violent square-ish drive
        let cmd = [0, 1, 2, 3].map(|i| 80.0 * (TAU * 3.0 * t + i as f64).sin().signum());
        body.step(&cmd, 1.0).unwrap();
        for &kn in &body.state().knee {
            assert!(kn >= p.knee_limits[0] - 1e-9 && kn <= p.knee_limits[1] + 1e-9);
        }
    }
}

#[test]
fn twin_runs_are_identical() {
    let targets = target_trajectories(&GaitDefinition::bounding(), 3.0, 1.0).unwrap();
    let run = || {
        let mut b = Body::new(BodyParams::default()).unwrap();
        let mut out = Vec::new();
        for k in 1..targets.len() {
            b.step(&targets.at(k), 1.0).unwrap();
            out.push(*b.state());
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn sensors_stay_continuous_through_disturbances() {
    let p = BodyParams::default();
    let targets = target_trajectories(&GaitDefinition::walking(), 12.0, 1.0).unwrap();
    let run = |disturb: bool| {
        let mut b = Body::new(p).unwrap();
        let mut max_jump: f64 = 0.0;
        let mut prev = b.sensors();
        for k in 1..targets.len() {
            if disturb && k == 4000 {
                b.disturb(&Disturbance::DisplacePose {
                    dx: 1.0,
                    dy: -0.5,
                    dheading: 0.7,
                });
            }
            if disturb && k == 6000 {
                b.disturb(&Disturbance::FreezeThenRelease { duration_ms: 2000.0 });
            }
            b.step(&targets.at(k), 1.0).unwrap();
            let now = b.sensors();
            for i in 0..4 {
                max_jump = max_jump.max((now[i] - prev[i]).abs());
            }
            prev = now;
        }
        max_jump
    };
    let reference = run(false);
    let disturbed = run(true);
    assert!(
        disturbed <= 1.5 * reference,
        "largest per-step knee change {disturbed} vs undisturbed {reference}"
    );
}

#[test]
fn zero_disturbances_are_identity() {
    let p = BodyParams::default();
    let mut s = BodyState::standing(&p, [5.0, -5.0, 10.0, 0.0]);
    s.speed = 0.3;
    s.knee_velocity = [1.0, 2.0, 3.0, 4.0];
    let a = apply_disturbance(
        &s,
        &Disturbance::DisplacePose {
            dx: 0.0,
            dy: 0.0,
            dheading: 0.0,
        },
    );
    let b = apply_disturbance(&s, &Disturbance::FreezeThenRelease { duration_ms: 0.0 });
    assert_eq!(a, s);
    assert_eq!(b, s);
}
