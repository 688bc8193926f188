//! Phase-coupled amplitude oscillators producing hip-joint target angles.
//!
//! Each leg runs
//!
//! ```text
//! dr/dt   = gamma (mu - r^2) r
//! dphi/dt = omega + w sin(phi_ref - phi - po)      (no coupling term on the reference leg)
//! lambda  = r cos(phi_L) + o
//! ```
//!
//! where `phi_L` is the duty-factor phase filter. Configured amplitudes are taken
//! as the steady radius, so `mu = amplitude^2`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    FrontLeft,
    FrontRight,
    HindLeft,
    HindRight,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::FrontLeft, Leg::FrontRight, Leg::HindLeft, Leg::HindRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::FrontRight)
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::HindLeft)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Leg::FrontLeft => "fl",
            Leg::FrontRight => "fr",
            Leg::HindLeft => "hl",
            Leg::HindRight => "hr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    /// Squared steady radius.
    pub mu: f64,
    /// Radius convergence gain.
    pub gamma: f64,
    /// rad/s
    pub omega: f64,
    /// degrees
    pub offset: f64,
    pub duty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorState {
    pub r: f64,
    /// Unwrapped phase, rad.
    pub phi: f64,
}

fn radius_rate(r: f64, p: &OscillatorParams) -> f64 {
    p.gamma * (p.mu - r * r) * r
}

/// One RK4 step of a free oscillator; `dt_s` in seconds.
pub fn oscillator_step(s: &OscillatorState, p: &OscillatorParams, dt_s: f64) -> OscillatorState {
    let k1 = radius_rate(s.r, p);
    let k2 = radius_rate(s.r + 0.5 * dt_s * k1, p);
    let k3 = radius_rate(s.r + 0.5 * dt_s * k2, p);
    let k4 = radius_rate(s.r + dt_s * k3, p);
    OscillatorState {
        r: (s.r + dt_s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0),
        phi: s.phi + p.omega * dt_s,
    }
}

/// Piecewise-linear duty-factor phase map. The first `2 pi d` of the cycle is
/// stretched onto `[0, pi)`, the remainder onto `[pi, 2 pi)`.
pub fn phase_filter(phi: f64, duty: f64) -> Result<f64> {
    if !(duty > 0.0 && duty < 1.0) {
        return Err(invalid("duty", format!("must lie in (0, 1), got {duty}")));
    }
    Ok(phase_filter_unchecked(phi, duty))
}

#[inline]
fn phase_filter_unchecked(phi: f64, d: f64) -> f64 {
    let p = phi.rem_euclid(TAU);
    if p < TAU * d {
        p / (2.0 * d)
    } else {
        (p + TAU * (1.0 - 2.0 * d)) / (2.0 * (1.0 - d))
    }
}

/// Amplitude, duty factor and offset shared by a front or hind leg pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegShape {
    /// Steady swing amplitude, degrees.
    pub amplitude: f64,
    pub duty: f64,
    /// degrees
    pub offset: f64,
}

/// Phase offsets of the non-reference legs relative to front-left, with the
/// coupling strength of each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    /// degrees
    pub po_fr: f64,
    pub po_hl: f64,
    pub po_hr: f64,
    /// 1/s, for fr, hl, hr
    pub strength: [f64; 3],
}

impl CouplingSpec {
    /// Offset (rad) of `leg` behind the reference leg.
    pub fn offset_rad(&self, leg: Leg) -> f64 {
        match leg {
            Leg::FrontLeft => 0.0,
            Leg::FrontRight => self.po_fr.to_radians(),
            Leg::HindLeft => self.po_hl.to_radians(),
            Leg::HindRight => self.po_hr.to_radians(),
        }
    }

    pub fn strength_of(&self, leg: Leg) -> f64 {
        match leg {
            Leg::FrontLeft => 0.0,
            Leg::FrontRight => self.strength[0],
            Leg::HindLeft => self.strength[1],
            Leg::HindRight => self.strength[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitDefinition {
    pub front: LegShape,
    pub hind: LegShape,
    pub coupling: CouplingSpec,
    pub frequency_hz: f64,
    /// Radius convergence rate `gamma * mu` in 1/s.
    #[serde(default = "default_convergence")]
    pub convergence_rate: f64,
}

fn default_convergence() -> f64 {
    5.0
}

pub const DEFAULT_COUPLING: f64 = 2.0;
pub const DEFAULT_FREQUENCY_HZ: f64 = 1.44;

impl GaitDefinition {
    /// Lateral-sequence walk: fr half a cycle behind fl, hind legs at
    /// 270 and 90 degrees.
    pub fn walking() -> Self {
        Self {
            front: LegShape {
                amplitude: 30.0,
                duty: 0.6,
                offset: 0.0,
            },
            hind: LegShape {
                amplitude: 30.0,
                duty: 0.6,
                offset: 0.0,
            },
            coupling: CouplingSpec {
                po_fr: 180.0,
                po_hl: 270.0,
                po_hr: 90.0,
                strength: [DEFAULT_COUPLING; 3],
            },
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            convergence_rate: default_convergence(),
        }
    }

    /// Front pair in phase, hind pair in phase, half a cycle apart.
    pub fn bounding() -> Self {
        Self {
            front: LegShape {
                amplitude: 25.0,
                duty: 0.5,
                offset: 5.0,
            },
            hind: LegShape {
                amplitude: 35.0,
                duty: 0.5,
                offset: -5.0,
            },
            coupling: CouplingSpec {
                po_fr: 0.0,
                po_hl: 180.0,
                po_hr: 180.0,
                strength: [DEFAULT_COUPLING; 3],
            },
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            convergence_rate: default_convergence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("front", &self.front), ("hind", &self.hind)] {
            if !(s.amplitude > 0.0) || !s.amplitude.is_finite() {
                return Err(invalid("amplitude", format!("{name} amplitude must be > 0")));
            }
            if !(s.duty > 0.0 && s.duty < 1.0) {
                return Err(invalid("duty", format!("{name} duty must be in (0, 1)")));
            }
            if !s.offset.is_finite() {
                return Err(invalid("offset", "must be finite"));
            }
        }
        if !(self.frequency_hz > 0.0) || !self.frequency_hz.is_finite() {
            return Err(invalid("frequency_hz", "must be > 0"));
        }
        if !(self.convergence_rate > 0.0) {
            return Err(invalid("convergence_rate", "must be > 0"));
        }
        Ok(())
    }

    pub fn shape(&self, leg: Leg) -> &LegShape {
        if leg.is_front() {
            &self.front
        } else {
            &self.hind
        }
    }

    pub fn leg_params(&self, leg: Leg) -> OscillatorParams {
        let s = self.shape(leg);
        let mu = s.amplitude * s.amplitude;
        OscillatorParams {
            mu,
            gamma: self.convergence_rate / mu,
            omega: TAU * self.frequency_hz,
            offset: s.offset,
            duty: s.duty,
        }
    }

    /// Oscillators on the limit cycle with phases already locked.
    pub fn locked_states(&self) -> [OscillatorState; 4] {
        Leg::ALL.map(|leg| OscillatorState {
            r: self.shape(leg).amplitude,
            phi: -self.coupling.offset_rad(leg),
        })
    }
}

fn derivatives(s: &[OscillatorState; 4], p: &[OscillatorParams; 4], c: &CouplingSpec) -> [(f64, f64); 4] {
    let phi_ref = s[0].phi;
    let mut out = [(0.0, 0.0); 4];
    for leg in Leg::ALL {
        let i = leg.index();
        let mut dphi = p[i].omega;
        if i > 0 {
            dphi += c.strength_of(leg) * (phi_ref - s[i].phi - c.offset_rad(leg)).sin();
        }
        out[i] = (radius_rate(s[i].r, &p[i]), dphi);
    }
    out
}

fn axpy(s: &[OscillatorState; 4], k: &[(f64, f64); 4], h: f64) -> [OscillatorState; 4] {
    let mut o = *s;
    for i in 0..4 {
        o[i].r += h * k[i].0;
        o[i].phi += h * k[i].1;
    }
    o
}

/// One RK4 step of the four coupled oscillators (front-left is the
/// reference and carries no coupling term).
pub fn coupled_step(
    states: &[OscillatorState; 4],
    gait: &GaitDefinition,
    dt_s: f64,
) -> [OscillatorState; 4] {
    let params = Leg::ALL.map(|l| gait.leg_params(l));
    coupled_step_with(states, &params, &gait.coupling, dt_s)
}

fn coupled_step_with(
    s: &[OscillatorState; 4],
    p: &[OscillatorParams; 4],
    c: &CouplingSpec,
    h: f64,
) -> [OscillatorState; 4] {
    let k1 = derivatives(s, p, c);
    let k2 = derivatives(&axpy(s, &k1, 0.5 * h), p, c);
    let k3 = derivatives(&axpy(s, &k2, 0.5 * h), p, c);
    let k4 = derivatives(&axpy(s, &k3, h), p, c);
    let mut o = *s;
    for i in 0..4 {
        o[i].r = (s[i].r + h / 6.0 * (k1[i].0 + 2.0 * k2[i].0 + 2.0 * k3[i].0 + k4[i].0)).max(0.0);
        o[i].phi = s[i].phi + h / 6.0 * (k1[i].1 + 2.0 * k2[i].1 + 2.0 * k3[i].1 + k4[i].1);
    }
    o
}

/// Output angle `r cos(phi_L) + o` of one oscillator.
pub fn leg_output(s: &OscillatorState, p: &OscillatorParams) -> f64 {
    s.r * phase_filter_unchecked(s.phi, p.duty).cos() + p.offset
}

/// A running CPG whose gait may be changed on the fly; phases and radii stay
/// continuous across changes.
#[derive(Debug, Clone)]
pub struct Cpg {
    gait: GaitDefinition,
    params: [OscillatorParams; 4],
    states: [OscillatorState; 4],
}

impl Cpg {
    pub fn new(gait: GaitDefinition) -> Result<Self> {
        gait.validate()?;
        Ok(Self {
            params: Leg::ALL.map(|l| gait.leg_params(l)),
            states: gait.locked_states(),
            gait,
        })
    }

    pub fn with_states(gait: GaitDefinition, states: [OscillatorState; 4]) -> Result<Self> {
        let mut c = Self::new(gait)?;
        c.states = states;
        Ok(c)
    }

    pub fn gait(&self) -> &GaitDefinition {
        &self.gait
    }

    pub fn states(&self) -> &[OscillatorState; 4] {
        &self.states
    }

    pub fn set_gait(&mut self, gait: GaitDefinition) -> Result<()> {
        gait.validate()?;
        self.params = Leg::ALL.map(|l| gait.leg_params(l));
        self.gait = gait;
        Ok(())
    }

    pub fn outputs(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| leg_output(&self.states[i], &self.params[i]))
    }

    /// Advances by `dt_s` seconds and returns the new leg angles.
    pub fn step(&mut self, dt_s: f64) -> [f64; 4] {
        self.states = coupled_step_with(&self.states, &self.params, &self.gait.coupling, dt_s);
        self.outputs()
    }
}

/// Uniformly sampled target angles for the four legs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetTrace {
    pub dt_ms: f64,
    pub time_s: Vec<f64>,
    pub legs: [Vec<f64>; 4],
}

impl TargetTrace {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn at(&self, k: usize) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.legs[i][k])
    }

    /// CSV with header `t,lambda_fl,lambda_fr,lambda_hl,lambda_hr`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,lambda_fl,lambda_fr,lambda_hl,lambda_hr")?;
        for k in 0..self.len() {
            let v = self.at(k);
            writeln!(w, "{},{},{},{},{}", self.time_s[k], v[0], v[1], v[2], v[3])?;
        }
        Ok(())
    }
}

/// Runs the coupled CPG from its locked state for `duration_s`, sampling
/// every `dt_ms`. Sample 0 is the initial state at t = 0.
pub fn target_trajectories(gait: &GaitDefinition, duration_s: f64, dt_ms: f64) -> Result<TargetTrace> {
    if !(dt_ms > 0.0) {
        return Err(invalid("dt_ms", "must be > 0"));
    }
    if !(duration_s >= 0.0) {
        return Err(invalid("duration_s", "must be >= 0"));
    }
    let mut cpg = Cpg::new(*gait)?;
    let n = (duration_s * 1000.0 / dt_ms).round() as usize;
    let mut trace = TargetTrace {
        dt_ms,
        time_s: Vec::with_capacity(n + 1),
        legs: Default::default(),
    };
    let push = |t: f64, v: [f64; 4], tr: &mut TargetTrace| {
        tr.time_s.push(t);
        for i in 0..4 {
            tr.legs[i].push(v[i]);
        }
    };
    push(0.0, cpg.outputs(), &mut trace);
    for k in 1..=n {
        let v = cpg.step(dt_ms * 1e-3);
        push(k as f64 * dt_ms * 1e-3, v, &mut trace);
    }
    Ok(trace)
}

/// Targets from one CPG whose gait switches at the given times (s). The
/// oscillator state carries over each switch so the trace stays continuous.
pub fn scheduled_trajectories(
    segments: &[(f64, GaitDefinition)],
    duration_s: f64,
    dt_ms: f64,
) -> Result<TargetTrace> {
    if segments.is_empty() {
        return Err(invalid("segments", "at least one gait is required"));
    }
    if !(dt_ms > 0.0) {
        return Err(invalid("dt_ms", "must be > 0"));
    }
    if !(duration_s >= 0.0) {
        return Err(invalid("duration_s", "must be >= 0"));
    }
    let mut cpg = Cpg::new(segments[0].1)?;
    let n = (duration_s * 1000.0 / dt_ms).round() as usize;
    let mut trace = TargetTrace {
        dt_ms,
        time_s: Vec::with_capacity(n + 1),
        legs: Default::default(),
    };
    let mut next = 1;
    let out = cpg.outputs();
    trace.time_s.push(0.0);
    for i in 0..4 {
        trace.legs[i].push(out[i]);
    }
    for k in 1..=n {
        let t_prev = (k - 1) as f64 * dt_ms * 1e-3;
        while next < segments.len() && segments[next].0 <= t_prev {
            cpg.set_gait(segments[next].1)?;
            next += 1;
        }
        let v = cpg.step(dt_ms * 1e-3);
        trace.time_s.push(k as f64 * dt_ms * 1e-3);
        for i in 0..4 {
            trace.legs[i].push(v[i]);
        }
    }
    Ok(trace)
}

/// Wraps an angle difference into (-pi, pi].
pub fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn free(mu: f64, gamma: f64) -> OscillatorParams {
        OscillatorParams {
            mu,
            gamma,
            omega: TAU * 1.44,
            offset: 0.0,
            duty: 0.5,
        }
    }

    #[test]
    fn radius_fixed_point() {
        let p = free(4.0, 1.0);
        let mut s = OscillatorState { r: 2.0, phi: 0.0 };
        for _ in 0..1000 {
            s = oscillator_step(&s, &p, 1e-3);
        }
        assert_eq!(s.r, 2.0);
    }

    #[test]
    fn radius_tracks_logistic_closed_form() {
        // u = r^2 solves du/dt = 2 gamma (mu - u) u
        let (mu, gamma, r0) = (1.0, 5.0, 0.1f64);
        let p = free(mu, gamma);
        let mut s = OscillatorState { r: r0, phi: 0.0 };
        let u0 = r0 * r0;
        let mut prev = r0;
        for k in 1..=10_000 {
            s = oscillator_step(&s, &p, 1e-3);
            assert!(s.r >= prev);
            prev = s.r;
            let t = k as f64 * 1e-3;
            let u = mu / (1.0 + (mu / u0 - 1.0) * (-2.0 * gamma * mu * t).exp());
            assert!((s.r - u.sqrt()).abs() < 1e-8);
        }
        assert!((s.r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phase_period_matches_frequency() {
        let p = free(1.0, 5.0);
        let mut s = OscillatorState { r: 1.0, phi: 0.0 };
        let steps = (1000.0 / 1.44f64).round() as usize;
        for _ in 0..steps {
            s = oscillator_step(&s, &p, 1e-3);
        }
        // 694 steps of 1 ms vs the exact 694.44 ms period
        assert!((s.phi - TAU).abs() <= p.omega * 1e-3);
    }

    #[test]
    fn phase_filter_cases() {
        for k in 0..100 {
            let phi = k as f64 * 0.0628;
            assert_relative_eq!(phase_filter(phi, 0.5).unwrap(), phi, epsilon = 1e-12);
        }
        assert_relative_eq!(phase_filter(PI / 4.0, 0.25).unwrap(), PI / 2.0, epsilon = 1e-12);
        assert!(phase_filter(1.0, 0.0).is_err());
        assert!(phase_filter(1.0, 1.0).is_err());
        assert!(phase_filter(1.0, -0.2).is_err());
        // wraps modulo 2 pi
        assert_relative_eq!(
            phase_filter(PI / 4.0 + 3.0 * TAU, 0.25).unwrap(),
            PI / 2.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn uncoupled_legs_evolve_independently() {
        let mut gait = GaitDefinition::walking();
        gait.coupling.strength = [0.0; 3];
        let init = [
            OscillatorState { r: 20.0, phi: 0.3 },
            OscillatorState { r: 40.0, phi: 1.3 },
            OscillatorState { r: 10.0, phi: -2.0 },
            OscillatorState { r: 30.0, phi: 4.0 },
        ];
        let mut coupled = init;
        let mut single = init;
        for _ in 0..2000 {
            coupled = coupled_step(&coupled, &gait, 1e-3);
            for leg in Leg::ALL {
                single[leg.index()] =
                    oscillator_step(&single[leg.index()], &gait.leg_params(leg), 1e-3);
            }
        }
        for i in 0..4 {
            assert_relative_eq!(coupled[i].r, single[i].r, max_relative = 1e-12);
            assert_relative_eq!(coupled[i].phi, single[i].phi, max_relative = 1e-12);
        }
    }

    #[test]
    fn targets_are_pure_cosine_at_half_duty() {
        let mut gait = GaitDefinition::walking();
        gait.front.duty = 0.5;
        gait.hind.duty = 0.5;
        let tr = target_trajectories(&gait, 3.0, 1.0).unwrap();
        let w = TAU * gait.frequency_hz;
        for k in 0..tr.len() {
            let t = tr.time_s[k];
            assert!((tr.legs[0][k] - 30.0 * (w * t).cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn offset_shifts_trace() {
        let g0 = GaitDefinition::walking();
        let mut g1 = g0;
        g1.front.offset = 12.5;
        g1.hind.offset = 12.5;
        let a = target_trajectories(&g0, 2.0, 1.0).unwrap();
        let b = target_trajectories(&g1, 2.0, 1.0).unwrap();
        for i in 0..4 {
            for k in 0..a.len() {
                assert!((b.legs[i][k] - a.legs[i][k] - 12.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wrap_pi_range() {
        assert_relative_eq!(wrap_pi(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_pi(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_pi(0.1), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn target_csv_header() {
        let tr = target_trajectories(&GaitDefinition::walking(), 0.002, 1.0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,lambda_fl,lambda_fr,lambda_hl,lambda_hr\n"));
        assert_eq!(s.lines().count(), 4);
    }
}
