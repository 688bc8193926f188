//! Planar surrogate of a compliant quadruped: four servo-driven hips, four
//! passive spring-damper knees, and a kinematic stance-progression contact
//! model that turns backward leg sweeps into forward body motion.
//!
//! Default mechanical values are surrogate choices, not measurements of any
//! physical robot. Angles are in degrees at the interface, SI internally.

use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyParams {
    /// N m / rad
    pub knee_stiffness: [f64; 4],
    /// N m s / rad
    pub knee_damping: [f64; 4],
    /// degrees
    pub knee_rest_angle: [f64; 4],
    /// Mechanical stops, degrees.
    pub knee_limits: [f64; 2],
    /// m
    pub thigh_length: f64,
    pub shank_length: f64,
    /// kg
    pub shank_mass: f64,
    pub body_mass: f64,
    pub gravity: f64,
    /// Fraction of `F * shank_length` that acts as knee flexion torque in stance.
    pub load_lever: f64,
    /// Hip speed (deg/s) beyond which a leg switches between stance and swing.
    pub contact_hysteresis: f64,
    /// Traction when only one leg is on the ground.
    pub single_stance_traction: f64,
    pub contact_enabled: bool,
    /// Servo response time constant, ms (critically damped second order).
    pub actuator_tau_ms: f64,
    /// Body velocity relaxation time while in contact, ms.
    pub body_tau_ms: f64,
    /// m
    pub track_width: f64,
    pub turn_gain: f64,
    /// Semi-implicit Euler sub-steps per body step.
    pub substeps: usize,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            knee_stiffness: [0.6; 4],
            knee_damping: [0.004; 4],
            knee_rest_angle: [20.0; 4],
            knee_limits: [-10.0, 80.0],
            thigh_length: 0.1,
            shank_length: 0.1,
            shank_mass: 0.05,
            body_mass: 1.2,
            gravity: 9.81,
            load_lever: 0.3,
            contact_hysteresis: 5.0,
            single_stance_traction: 0.5,
            contact_enabled: true,
            actuator_tau_ms: 40.0,
            body_tau_ms: 80.0,
            track_width: 0.15,
            turn_gain: 0.5,
            substeps: 5,
        }
    }
}

impl BodyParams {
    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if !(self.knee_stiffness[i] > 0.0) {
                return Err(invalid("knee_stiffness", "must be > 0"));
            }
            if !(self.knee_damping[i] >= 0.0) {
                return Err(invalid("knee_damping", "must be >= 0"));
            }
            let r = self.knee_rest_angle[i];
            if !(r >= self.knee_limits[0] && r <= self.knee_limits[1]) {
                return Err(invalid("knee_rest_angle", "must lie within the knee limits"));
            }
        }
        if !(self.shank_mass > 0.0 && self.body_mass > 0.0) {
            return Err(invalid("mass", "masses must be > 0"));
        }
        if !(self.thigh_length > 0.0 && self.shank_length > 0.0) {
            return Err(invalid("length", "segment lengths must be > 0"));
        }
        if !(self.actuator_tau_ms > 0.0 && self.body_tau_ms > 0.0) {
            return Err(invalid("tau", "time constants must be > 0"));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps", "must be >= 1"));
        }
        if !(self.knee_limits[0] < self.knee_limits[1]) {
            return Err(invalid("knee_limits", "lower stop must be below upper stop"));
        }
        Ok(())
    }

    /// Shank moment of inertia about the knee (uniform rod), kg m^2.
    pub fn knee_inertia(&self) -> f64 {
        self.shank_mass * self.shank_length * self.shank_length / 3.0
    }

    /// Knee angle (deg) of a standing leg at hip angle `hip_deg` with
    /// `stance_legs` legs sharing the load.
    pub fn static_knee_angle(&self, leg: usize, hip_deg: f64, stance_legs: usize) -> f64 {
        let f = self.body_mass * self.gravity / stance_legs as f64;
        let torque = f * self.shank_length * self.load_lever * hip_deg.to_radians().cos();
        self.knee_rest_angle[leg] + (torque / self.knee_stiffness[leg]).to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    /// Actual hip angles after the servo, degrees.
    pub hip: [f64; 4],
    pub hip_velocity: [f64; 4],
    /// Passive knee angles, degrees.
    pub knee: [f64; 4],
    pub knee_velocity: [f64; 4],
    pub x: f64,
    pub y: f64,
    /// rad
    pub heading: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    pub distance_from_origin: f64,
    pub contact: [bool; 4],
    pub freeze_remaining_ms: f64,
    pub time_ms: f64,
}

impl BodyState {
    /// Standing still at the origin with the given hip angles and knees at
    /// their loaded static equilibrium.
    pub fn standing(params: &BodyParams, hip: [f64; 4]) -> Self {
        let contact = [params.contact_enabled; 4];
        let n = contact.iter().filter(|c| **c).count();
        let knee = std::array::from_fn(|i| {
            if n > 0 {
                params.static_knee_angle(i, hip[i], n)
            } else {
                params.knee_rest_angle[i]
            }
        });
        Self {
            hip,
            hip_velocity: [0.0; 4],
            knee,
            knee_velocity: [0.0; 4],
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
            distance_from_origin: 0.0,
            contact,
            freeze_remaining_ms: 0.0,
            time_ms: 0.0,
        }
    }

    /// Unloaded legs at rest: knees at the spring rest angle.
    pub fn at_rest(params: &BodyParams) -> Self {
        Self {
            knee: params.knee_rest_angle,
            ..Self::standing(params, [0.0; 4])
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.freeze_remaining_ms > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Disturbance {
    /// Teleport the body; joints untouched.
    DisplacePose { dx: f64, dy: f64, dheading: f64 },
    /// Zero all velocities and hold the passive joints, with no ground
    /// contact, for `duration_ms`.
    FreezeThenRelease { duration_ms: f64 },
}

pub fn apply_disturbance(state: &BodyState, kind: &Disturbance) -> BodyState {
    let mut s = *state;
    match *kind {
        Disturbance::DisplacePose { dx, dy, dheading } => {
            s.x += dx;
            s.y += dy;
            s.heading += dheading;
            s.distance_from_origin = s.x.hypot(s.y);
        }
        Disturbance::FreezeThenRelease { duration_ms } => {
            if duration_ms > 0.0 {
                s.knee_velocity = [0.0; 4];
                s.hip_velocity = [0.0; 4];
                s.speed = 0.0;
                s.freeze_remaining_ms = s.freeze_remaining_ms.max(duration_ms);
            }
        }
    }
    s
}

/// Passive joint angles, degrees.
pub fn read_sensors(state: &BodyState) -> [f64; 4] {
    state.knee
}

/// Advances the body by `dt_ms` under commanded hip angles (degrees).
pub fn body_step(
    params: &BodyParams,
    state: &BodyState,
    motor_angles: &[f64; 4],
    dt_ms: f64,
) -> Result<BodyState> {
    for &m in motor_angles {
        finite("motor angle", m)?;
    }
    if !(dt_ms > 0.0) || !dt_ms.is_finite() {
        return Err(invalid("dt", "must be > 0"));
    }
    let mut s = *state;
    let frozen = s.is_frozen();
    let dt = dt_ms * 1e-3;
    let h = dt / params.substeps as f64;

    // servo: critically damped second-order tracking of the command
    let wa = 1000.0 / params.actuator_tau_ms;
    let mut hip_acc = [0.0; 4];
    for i in 0..4 {
        let mut a = s.hip[i];
        let mut v = s.hip_velocity[i];
        let mut acc_sum = 0.0;
        for _ in 0..params.substeps {
            let acc = wa * wa * (motor_angles[i] - a) - 2.0 * wa * v;
            v += h * acc;
            a += h * v;
            acc_sum += acc;
        }
        s.hip[i] = a;
        s.hip_velocity[i] = v;
        hip_acc[i] = acc_sum / params.substeps as f64;
    }

    for i in 0..4 {
        if !params.contact_enabled || frozen {
            s.contact[i] = false;
        } else if s.hip_velocity[i] < -params.contact_hysteresis {
            s.contact[i] = true;
        } else if s.hip_velocity[i] > params.contact_hysteresis {
            s.contact[i] = false;
        }
    }
    let n_stance = s.contact.iter().filter(|c| **c).count();

    if frozen {
        s.knee_velocity = [0.0; 4];
        s.speed = 0.0;
    } else {
        let inertia = params.knee_inertia();
        let load = if n_stance > 0 {
            params.body_mass * params.gravity / n_stance as f64
        } else {
            0.0
        };
        let swing_coupling = params.shank_mass * params.thigh_length * params.shank_length / 2.0;
        for i in 0..4 {
            let rest = params.knee_rest_angle[i].to_radians();
            let mut k = s.knee[i].to_radians();
            let mut kv = s.knee_velocity[i].to_radians();
            let hip = s.hip[i].to_radians();
            let external = if s.contact[i] {
                load * params.shank_length * params.load_lever * hip.cos()
            } else {
                0.0
            } - swing_coupling * hip_acc[i].to_radians();
            let (lo, hi) = (params.knee_limits[0].to_radians(), params.knee_limits[1].to_radians());
            for _ in 0..params.substeps {
                let torque = -params.knee_stiffness[i] * (k - rest) - params.knee_damping[i] * kv + external;
                kv += h * torque / inertia;
                k += h * kv;
                if k < lo {
                    k = lo;
                    kv = kv.max(0.0);
                } else if k > hi {
                    k = hi;
                    kv = kv.min(0.0);
                }
            }
            s.knee[i] = k.to_degrees();
            s.knee_velocity[i] = kv.to_degrees();
        }

        // stance legs push the body with the backward speed of their feet
        let foot_speed = |i: usize| {
            let leg_len = params.thigh_length + params.shank_length * s.knee[i].to_radians().cos();
            -s.hip_velocity[i].to_radians() * leg_len * s.hip[i].to_radians().cos()
        };
        if n_stance > 0 {
            let mut side = [(0.0, 0usize); 2];
            let mut total = 0.0;
            for i in 0..4 {
                if s.contact[i] {
                    let u = foot_speed(i);
                    total += u;
                    let k = usize::from(i % 2 == 1);
                    side[k].0 += u;
                    side[k].1 += 1;
                }
            }
            let traction = if n_stance >= 2 { 1.0 } else { params.single_stance_traction };
            let target = traction * total / n_stance as f64;
            s.speed += (target - s.speed) * (1.0 - (-dt_ms / params.body_tau_ms).exp());
            if side[0].1 > 0 && side[1].1 > 0 {
                let left = side[0].0 / side[0].1 as f64;
                let right = side[1].0 / side[1].1 as f64;
                s.heading += params.turn_gain * (right - left) / params.track_width * dt;
            }
        }
        s.x += s.speed * s.heading.cos() * dt;
        s.y += s.speed * s.heading.sin() * dt;
    }
    s.distance_from_origin = s.x.hypot(s.y);
    if frozen {
        s.freeze_remaining_ms = (s.freeze_remaining_ms - dt_ms).max(0.0);
    }
    s.time_ms += dt_ms;
    Ok(s)
}

/// A body with its parameters, for stepping in a loop.
#[derive(Debug, Clone)]
pub struct Body {
    params: BodyParams,
    state: BodyState,
}

impl Body {
    pub fn new(params: BodyParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            state: BodyState::at_rest(&params),
            params,
        })
    }

    pub fn params(&self) -> &BodyParams {
        &self.params
    }

    pub fn state(&self) -> &BodyState {
        &self.state
    }

    pub fn set_state(&mut self, s: BodyState) {
        self.state = s;
    }

    pub fn step(&mut self, motor_angles: &[f64; 4], dt_ms: f64) -> Result<&BodyState> {
        self.state = body_step(&self.params, &self.state, motor_angles, dt_ms)?;
        Ok(&self.state)
    }

    pub fn disturb(&mut self, kind: &Disturbance) {
        self.state = apply_disturbance(&self.state, kind);
    }

    pub fn sensors(&self) -> [f64; 4] {
        read_sensors(&self.state)
    }
}
