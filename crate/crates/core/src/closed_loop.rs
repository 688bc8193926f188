//! The sensorimotor loop: body sensors drive the reservoir, monitor
//! potentials feed four linear readouts, and the readouts (mixed with the
//! targets while learning) drive the hips.

use serde::{Deserialize, Serialize};

use crate::body::{Body, BodyParams, Disturbance};
use crate::cpg::TargetTrace;
use crate::error::{finite, invalid, Result, SimError};
use crate::force::{MixSchedule, RlsLearner};
use crate::interface::{readout_update, MonitorBank, NoiseSpec, SensorCalibration, SignalChannel};
use crate::reservoir::{spread_indices, Reservoir, ReservoirConfig};
use crate::spiking::LifParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterfaceConfig {
    pub monitor: LifParams,
    /// One population per knee sensor (FL, FR, HL, HR); empty picks
    /// populations spread over the lattice.
    pub sensor_populations: Vec<usize>,
    pub sensor_calibration: SensorCalibration,
    pub sensor_noise: NoiseSpec,
    pub sensor_cutoff_hz: f64,
    pub target_noise: NoiseSpec,
    /// Populations receiving the control current; empty picks the central
    /// half of the populations.
    pub control_populations: Vec<usize>,
    /// Keep sensor noise on once learning has stopped.
    pub noise_after_learning: bool,
}

impl Default for InterfaceConfig {
    fn default() -> Self {
        Self {
            monitor: LifParams::integrator(),
            sensor_populations: Vec::new(),
            sensor_calibration: SensorCalibration::default(),
            sensor_noise: NoiseSpec {
                gaussian_sd: 0.5,
                ..NoiseSpec::default()
            },
            sensor_cutoff_hz: 5.0,
            target_noise: NoiseSpec {
                seed: 1,
                ..NoiseSpec::default()
            },
            control_populations: Vec::new(),
            noise_after_learning: false,
        }
    }
}

impl InterfaceConfig {
    /// Resolved (sensor, control) population indices.
    pub fn populations(&self, n_populations: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let spread = spread_indices(n_populations, 5);
        let sensors = if self.sensor_populations.is_empty() {
            vec![spread[0], spread[1], spread[3], spread[4]]
        } else {
            self.sensor_populations.clone()
        };
        let control = if self.control_populations.is_empty() {
            let half = (n_populations / 2).max(1);
            let start = (n_populations - half) / 2;
            (start..start + half).collect()
        } else {
            self.control_populations.clone()
        };
        if sensors.len() != 4 {
            return Err(invalid("sensor_populations", "exactly four are required"));
        }
        for &p in sensors.iter().chain(&control) {
            if p >= n_populations {
                return Err(SimError::UnknownPopulation {
                    index: p,
                    count: n_populations,
                });
            }
        }
        Ok((sensors, control))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub alpha: f64,
    /// Ticks between RLS updates.
    pub update_period: usize,
    /// Any readout beyond this magnitude (degrees) aborts the run.
    pub divergence_limit: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            alpha: 50.0,
            update_period: 2,
            divergence_limit: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RigConfig {
    pub reservoir: ReservoirConfig,
    pub interface: InterfaceConfig,
    pub body: BodyParams,
    pub learning: LearningConfig,
}

/// Piecewise-constant high-level control input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlInputPlan {
    /// `(start_s, level)` pairs in increasing start order.
    pub segments: Vec<(f64, f64)>,
    /// nA of DC current per unit level.
    pub gain_na: f64,
}

impl Default for ControlInputPlan {
    fn default() -> Self {
        Self {
            segments: Vec::new(),
            gain_na: 0.6,
        }
    }
}

impl ControlInputPlan {
    pub fn constant(level: f64, gain_na: f64) -> Self {
        Self {
            segments: vec![(0.0, level)],
            gain_na,
        }
    }

    pub fn validate(&self) -> Result<()> {
        finite("control gain", self.gain_na)?;
        for w in self.segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(invalid("control segments", "start times must increase"));
            }
        }
        for &(t, l) in &self.segments {
            finite("control segment start", t)?;
            finite("control level", l)?;
        }
        Ok(())
    }

    pub fn level_at(&self, t_s: f64) -> f64 {
        let i = self.segments.partition_point(|&(s, _)| s <= t_s);
        if i == 0 {
            0.0
        } else {
            self.segments[i - 1].1
        }
    }

    pub fn current_at(&self, t_s: f64) -> f64 {
        self.gain_na * self.level_at(t_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedDisturbance {
    pub at_s: f64,
    pub kind: Disturbance,
}

/// One tick of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub target: [f64; 4],
    pub readout: [f64; 4],
    /// Knee angles as the body reports them.
    pub sensor_raw: [f64; 4],
    /// After noise and low-pass, as injected.
    pub sensor_filtered: [f64; 4],
    pub control: f64,
    pub beta: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub distance: f64,
    pub motor: [f64; 4],
}

impl TraceRow {
    pub const HEADER: [&'static str; 27] = [
        "t", "target_fl", "target_fr", "target_hl", "target_hr", "readout_fl", "readout_fr",
        "readout_hl", "readout_hr", "sensor_raw_fl", "sensor_raw_fr", "sensor_raw_hl",
        "sensor_raw_hr", "sensor_filt_fl", "sensor_filt_fr", "sensor_filt_hl", "sensor_filt_hr",
        "control", "beta", "x", "y", "heading", "distance", "motor_fl", "motor_fr", "motor_hl",
        "motor_hr",
    ];

    pub fn values(&self) -> [f64; 27] {
        let mut v = [0.0; 27];
        v[0] = self.t;
        v[1..5].copy_from_slice(&self.target);
        v[5..9].copy_from_slice(&self.readout);
        v[9..13].copy_from_slice(&self.sensor_raw);
        v[13..17].copy_from_slice(&self.sensor_filtered);
        v[17] = self.control;
        v[18] = self.beta;
        v[19] = self.x;
        v[20] = self.y;
        v[21] = self.heading;
        v[22] = self.distance;
        v[23..27].copy_from_slice(&self.motor);
        v
    }
}

/// Reservoir, interface and body wired together.
pub struct Rig {
    dt: f64,
    reservoir: Reservoir,
    monitors: MonitorBank,
    sensors: Vec<SignalChannel>,
    targets: Vec<SignalChannel>,
    calibration: SensorCalibration,
    sensor_pops: Vec<usize>,
    control_pops: Vec<usize>,
    body: Body,
    learning: LearningConfig,
    noise_after_learning: bool,
    injected: Vec<(usize, f64)>,
    readout: [f64; 4],
    tick: u64,
}

impl Rig {
    pub fn new(cfg: &RigConfig, threads: usize) -> Result<Self> {
        let reservoir = Reservoir::build(&cfg.reservoir, threads)?;
        Self::with_reservoir(cfg, reservoir)
    }

    pub fn with_reservoir(cfg: &RigConfig, reservoir: Reservoir) -> Result<Self> {
        let dt = cfg.reservoir.dt;
        let n = reservoir.n_populations();
        let (sensor_pops, control_pops) = cfg.interface.populations(n)?;
        cfg.interface.sensor_calibration.validate()?;
        let ic = &cfg.interface;
        let sensors = (0..4)
            .map(|i| SignalChannel::new(ic.sensor_noise, ic.sensor_cutoff_hz, i))
            .collect::<Result<Vec<_>>>()?;
        let targets = (0..4)
            .map(|i| SignalChannel::new(ic.target_noise, f64::INFINITY, 16 + i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dt,
            monitors: MonitorBank::new(n, &ic.monitor, dt)?,
            reservoir,
            sensors,
            targets,
            calibration: ic.sensor_calibration,
            sensor_pops,
            control_pops,
            body: Body::new(cfg.body)?,
            learning: cfg.learning,
            noise_after_learning: ic.noise_after_learning,
            injected: Vec::new(),
            readout: [0.0; 4],
            tick: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_populations(&self) -> usize {
        self.monitors.len()
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut Body {
        &mut self.body
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn monitors(&self) -> &[f64] {
        self.monitors.potentials()
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.dt * 1e-3
    }

    pub fn sensor_populations(&self) -> &[usize] {
        &self.sensor_pops
    }

    pub fn control_populations(&self) -> &[usize] {
        &self.control_pops
    }

    pub fn new_learner(&self) -> Result<RlsLearner> {
        RlsLearner::new(self.n_populations(), 4, self.learning.alpha, self.learning.update_period)
    }

    fn snapshot(&self, target: [f64; 4], filtered: [f64; 4], control: f64, beta: f64, motor: [f64; 4]) -> TraceRow {
        let s = self.body.state();
        TraceRow {
            t: self.time_s(),
            target,
            readout: self.readout,
            sensor_raw: s.knee,
            sensor_filtered: filtered,
            control,
            beta,
            x: s.x,
            y: s.y,
            heading: s.heading,
            distance: s.distance_from_origin,
            motor,
        }
    }

    /// Advances the whole loop one tick.
    ///
    /// `learn` enables an RLS step on update ticks; `beta` is the readout
    /// share of the motor command.
    pub fn tick(
        &mut self,
        learner: &mut RlsLearner,
        target: [f64; 4],
        beta: f64,
        learn: bool,
        control_current: f64,
    ) -> Result<TraceRow> {
        let noise_on = learn || self.noise_after_learning;
        let raw = self.body.sensors();
        let mut filtered = [0.0; 4];
        self.injected.clear();
        for i in 0..4 {
            self.sensors[i].set_noise_enabled(noise_on);
            let (_, f) = self.sensors[i].corrupt_and_filter(raw[i], self.dt);
            filtered[i] = f;
            let current = self.calibration.encode_sensor(f)?;
            self.injected.push((self.sensor_pops[i], current));
        }
        if control_current != 0.0 {
            for &p in &self.control_pops {
                self.injected.push((p, control_current));
            }
        }
        let counts = self.reservoir.reservoir_step(&self.injected)?;
        let x = self.monitors.monitor_update(counts)?;
        self.tick += 1;
        let t_s = self.tick as f64 * self.dt * 1e-3;
        for (r, w) in self.readout.iter_mut().zip(learner.weights()) {
            *r = readout_update(w, x)?;
        }
        for (i, &r) in self.readout.iter().enumerate() {
            if !(r.abs() <= self.learning.divergence_limit) {
                return Err(SimError::Diverged {
                    readout: i,
                    value: r,
                    time_s: t_s,
                });
            }
        }
        if learn && self.tick % learner.update_period() as u64 == 0 {
            let mut e = [0.0; 4];
            for i in 0..4 {
                e[i] = self.readout[i] - self.targets[i].corrupt(target[i]);
            }
            learner.rls_update(x, &e)?;
        }
        let mut motor = [0.0; 4];
        for i in 0..4 {
            motor[i] = if beta == 0.0 {
                target[i]
            } else if beta == 1.0 {
                self.readout[i]
            } else {
                (1.0 - beta) * target[i] + beta * self.readout[i]
            };
        }
        self.body.step(&motor, self.dt)?;
        Ok(self.snapshot(target, filtered, control_current, beta, motor))
    }
}

/// What to run: targets sampled per tick (sample `k` at tick `k`), the mixing
/// schedule, the control input and timed disturbances.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub targets: &'a TargetTrace,
    pub schedule: &'a MixSchedule,
    pub control: &'a ControlInputPlan,
    pub disturbances: &'a [TimedDisturbance],
    /// Learning additionally requires the schedule to be in a learning phase.
    pub learn: bool,
    /// Schedule time at the first tick, s.
    pub schedule_offset_s: f64,
}

#[derive(Debug)]
pub struct EpisodeOutcome {
    pub trace: Vec<TraceRow>,
    pub error: Option<SimError>,
}

/// Runs `targets.len() - 1` ticks. The trace holds the initial row plus one
/// row per tick, or nothing when there are no ticks.
pub fn run_episode(rig: &mut Rig, learner: &mut RlsLearner, ep: &Episode<'_>) -> EpisodeOutcome {
    let mut trace = Vec::new();
    let n = ep.targets.len().saturating_sub(1);
    if n == 0 {
        return EpisodeOutcome { trace, error: None };
    }
    if let Err(e) = ep.control.validate().and(ep.schedule.validate()) {
        return EpisodeOutcome { trace, error: Some(e) };
    }
    if (ep.targets.dt_ms - rig.dt()).abs() > 1e-12 {
        return EpisodeOutcome {
            trace,
            error: Some(invalid("targets", "target sampling interval differs from the simulation step")),
        };
    }
    trace.reserve(n + 1);
    let dt_s = rig.dt() * 1e-3;
    let start = ep.schedule_offset_s;
    trace.push(rig.snapshot(
        ep.targets.at(0),
        [f64::NAN; 4],
        ep.control.current_at(0.0),
        ep.schedule.beta(start),
        rig.body.state().hip,
    ));
    let mut pending: Vec<&TimedDisturbance> = ep.disturbances.iter().collect();
    pending.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
    let mut next = 0;
    for k in 1..=n {
        // the tick covers (t_prev, t]; schedule and control use the tick start
        let t_local = (k - 1) as f64 * dt_s;
        while next < pending.len() && pending[next].at_s <= t_local {
            rig.body.disturb(&pending[next].kind);
            next += 1;
        }
        let t = start + t_local;
        let learn = ep.learn && ep.schedule.learning(t);
        let beta = ep.schedule.beta(t);
        match rig.tick(learner, ep.targets.at(k), beta, learn, ep.control.current_at(t_local)) {
            Ok(row) => trace.push(row),
            Err(e) => return EpisodeOutcome { trace, error: Some(e) },
        }
    }
    EpisodeOutcome { trace, error: None }
}
