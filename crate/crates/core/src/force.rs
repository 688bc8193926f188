//! Recursive least-squares readout training and the open-loop to closed-loop
//! mixing schedule.

use serde::{Deserialize, Serialize};

use crate::closed_loop::{run_episode, ControlInputPlan, Episode, Rig, TraceRow};
use crate::cpg::TargetTrace;
use crate::error::{invalid, Result, SimError};

pub const WEIGHTS_VERSION: u32 = 1;

/// Shared inverse-correlation matrix with one weight vector per readout.
#[derive(Debug, Clone)]
pub struct RlsLearner {
    alpha: f64,
    update_period: usize,
    n: usize,
    /// Row-major n x n, kept exactly symmetric.
    p: Vec<f64>,
    weights: Vec<Vec<f64>>,
    px: Vec<f64>,
    updates: u64,
    skipped: u64,
}

impl RlsLearner {
    pub fn new(n_inputs: usize, n_readouts: usize, alpha: f64, update_period: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid("alpha", "must be finite and > 0"));
        }
        if update_period == 0 {
            return Err(invalid("update_period", "must be >= 1"));
        }
        if n_inputs == 0 {
            return Err(invalid("n_inputs", "must be >= 1"));
        }
        let mut p = vec![0.0; n_inputs * n_inputs];
        for i in 0..n_inputs {
            p[i * n_inputs + i] = 1.0 / alpha;
        }
        Ok(Self {
            alpha,
            update_period,
            n: n_inputs,
            p,
            weights: vec![vec![0.0; n_inputs]; n_readouts],
            px: vec![0.0; n_inputs],
            updates: 0,
            skipped: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn update_period(&self) -> usize {
        self.update_period
    }

    pub fn n_inputs(&self) -> usize {
        self.n
    }

    pub fn n_readouts(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: Vec<Vec<f64>>) -> Result<()> {
        if w.len() != self.weights.len() || w.iter().any(|v| v.len() != self.n) {
            return Err(SimError::DimensionMismatch {
                what: "weights",
                expected: self.n,
                got: w.first().map_or(0, |v| v.len()),
            });
        }
        self.weights = w;
        Ok(())
    }

    /// P as a row-major slice.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Current readout values for input `x`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// One RLS step with errors `e = readout - target`. Returns `Ok(false)`
    /// and leaves the learner untouched when any input is non-finite.
    pub fn rls_update(&mut self, x: &[f64], errors: &[f64]) -> Result<bool> {
        if x.len() != self.n {
            return Err(SimError::DimensionMismatch {
                what: "rls input",
                expected: self.n,
                got: x.len(),
            });
        }
        if errors.len() != self.weights.len() {
            return Err(SimError::DimensionMismatch {
                what: "rls errors",
                expected: self.weights.len(),
                got: errors.len(),
            });
        }
        if x.iter().chain(errors).any(|v| !v.is_finite()) {
            self.skipped += 1;
            log::warn!("rls update skipped: non-finite input or error");
            return Ok(false);
        }
        let n = self.n;
        for i in 0..n {
            let row = &self.p[i * n..(i + 1) * n];
            self.px[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        let denom = 1.0 + self.px.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let px = &self.px;
        for i in 0..n {
            let ki = px[i] / denom;
            for j in i..n {
                let v = self.p[i * n + j] - ki * px[j];
                self.p[i * n + j] = v;
                self.p[j * n + i] = v;
            }
        }
        for (w, &e) in self.weights.iter_mut().zip(errors) {
            if e != 0.0 {
                for (wi, &pi) in w.iter_mut().zip(px) {
                    *wi -= e * pi / denom;
                }
            }
        }
        self.updates += 1;
        Ok(true)
    }

    /// Gain vector `k = P x / (1 + x^T P x)` for the current P, without updating.
    pub fn gain(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let px: Vec<f64> = (0..n)
            .map(|i| self.p[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let denom = 1.0 + px.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        px.into_iter().map(|v| v / denom).collect()
    }

    pub fn to_file(&self, schedule: &MixSchedule) -> WeightsFile {
        WeightsFile {
            version: WEIGHTS_VERSION,
            n_populations: self.n,
            alpha: self.alpha,
            update_period: self.update_period,
            schedule: *schedule,
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    OpenLoop,
    Mixing,
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampShape {
    #[default]
    Linear,
    /// 3u^2 - 2u^3
    Smoothstep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSchedule {
    pub open_s: f64,
    pub mix_s: f64,
    pub closed_s: f64,
    pub ramp: RampShape,
}

impl Default for MixSchedule {
    fn default() -> Self {
        Self {
            open_s: 40.0,
            mix_s: 20.0,
            closed_s: 40.0,
            ramp: RampShape::Linear,
        }
    }
}

impl MixSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("open_s", self.open_s), ("mix_s", self.mix_s), ("closed_s", self.closed_s)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, "phase durations must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn total_s(&self) -> f64 {
        self.open_s + self.mix_s + self.closed_s
    }

    pub fn phase(&self, t_s: f64) -> Phase {
        if t_s < self.open_s {
            Phase::OpenLoop
        } else if t_s < self.open_s + self.mix_s {
            Phase::Mixing
        } else {
            Phase::ClosedLoop
        }
    }

    /// Readout share of the motor command at time `t_s`.
    pub fn beta(&self, t_s: f64) -> f64 {
        if t_s <= self.open_s {
            return 0.0;
        }
        if t_s >= self.open_s + self.mix_s {
            return 1.0;
        }
        let u = (t_s - self.open_s) / self.mix_s;
        match self.ramp {
            RampShape::Linear => u,
            RampShape::Smoothstep => u * u * (3.0 - 2.0 * u),
        }
    }

    /// Whether readout weights are being learned at `t_s`.
    pub fn learning(&self, t_s: f64) -> bool {
        self.phase(t_s) != Phase::ClosedLoop
    }
}

pub fn mix_motor_command(target: f64, readout: f64, schedule: &MixSchedule, t_s: f64) -> f64 {
    let b = schedule.beta(t_s);
    if b == 0.0 {
        target
    } else if b == 1.0 {
        readout
    } else {
        (1.0 - b) * target + b * readout
    }
}

pub struct TrainingOutcome {
    pub learner: RlsLearner,
    pub trace: Vec<TraceRow>,
    /// Set when the run aborted (e.g. divergence); the trace is kept.
    pub error: Option<SimError>,
}

/// Runs the full schedule: learning through the open-loop and mixing phases,
/// then frozen weights in closed loop. `targets` must cover the schedule.
pub fn train_gait(
    rig: &mut Rig,
    targets: &TargetTrace,
    schedule: &MixSchedule,
    control: &ControlInputPlan,
) -> Result<TrainingOutcome> {
    schedule.validate()?;
    let n = (schedule.total_s() * 1000.0 / rig.dt()).round() as usize;
    if targets.len() < n + 1 {
        return Err(invalid("targets", "target duration does not cover the schedule"));
    }
    let mut learner = rig.new_learner()?;
    let window = TargetTrace {
        dt_ms: targets.dt_ms,
        time_s: targets.time_s[..n + 1].to_vec(),
        legs: std::array::from_fn(|i| targets.legs[i][..n + 1].to_vec()),
    };
    let out = run_episode(
        rig,
        &mut learner,
        &Episode {
            targets: &window,
            schedule,
            control,
            disturbances: &[],
            learn: true,
            schedule_offset_s: 0.0,
        },
    );
    if let Some(e) = &out.error {
        log::error!("training aborted: {e}");
    }
    Ok(TrainingOutcome {
        learner,
        trace: out.trace,
        error: out.error,
    })
}

/// Serialized readout weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub version: u32,
    pub n_populations: usize,
    pub alpha: f64,
    pub update_period: usize,
    pub schedule: MixSchedule,
    /// One vector per readout, front-left, front-right, hind-left, hind-right.
    pub weights: Vec<Vec<f64>>,
}

impl WeightsFile {
    pub fn write<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::other)
    }

    pub fn read<R: std::io::Read>(r: R) -> std::io::Result<Self> {
        let f: Self = serde_json::from_reader(r).map_err(std::io::Error::other)?;
        if f.version != WEIGHTS_VERSION {
            return Err(std::io::Error::other(format!(
                "unsupported weights version {} (expected {WEIGHTS_VERSION})",
                f.version
            )));
        }
        if f.weights.iter().any(|w| w.len() != f.n_populations) {
            return Err(std::io::Error::other("weight vector length differs from n_populations"));
        }
        Ok(f)
    }

    pub fn learner(&self) -> Result<RlsLearner> {
        let mut l = RlsLearner::new(self.n_populations, self.weights.len(), self.alpha, self.update_period)?;
        l.set_weights(self.weights.clone())?;
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_hand_example() {
        let mut l = RlsLearner::new(2, 1, 1.0, 1).unwrap();
        let k = l.gain(&[1.0, 0.0]);
        assert_eq!(k, vec![0.5, 0.0]);
        l.rls_update(&[1.0, 0.0], &[0.0]).unwrap();
        assert_eq!(l.p(), &[0.5, 0.0, 0.0, 1.0]);
        assert_eq!(l.weights()[0], vec![0.0, 0.0]);
    }

    #[test]
    fn zero_error_updates_p_only() {
        let mut l = RlsLearner::new(3, 2, 50.0, 2).unwrap();
        let p0 = l.p().to_vec();
        l.rls_update(&[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_ne!(l.p(), &p0[..]);
        assert!(l.weights().iter().flatten().all(|&w| w == 0.0));
    }

    #[test]
    fn non_finite_inputs_are_skipped() {
        let mut l = RlsLearner::new(2, 1, 1.0, 1).unwrap();
        assert!(!l.rls_update(&[f64::NAN, 0.0], &[1.0]).unwrap());
        assert!(!l.rls_update(&[1.0, 0.0], &[f64::INFINITY]).unwrap());
        assert_eq!(l.skipped(), 2);
        assert_eq!(l.updates(), 0);
        assert_eq!(l.p(), &[1.0, 0.0, 0.0, 1.0]);
        assert!(l.rls_update(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn single_update_reduces_error() {
        let mut l = RlsLearner::new(3, 1, 50.0, 1).unwrap();
        let x = [0.3, -1.2, 2.0];
        let target = 4.0;
        let before = l.predict(&x)[0] - target;
        l.rls_update(&x, &[before]).unwrap();
        let after = l.predict(&x)[0] - target;
        assert!(after.abs() < before.abs());
    }

    #[test]
    fn schedule_phases_and_beta() {
        let s = MixSchedule::default();
        assert_eq!(s.beta(0.0), 0.0);
        assert_eq!(s.beta(40.0), 0.0);
        assert_eq!(s.beta(50.0), 0.5);
        assert_eq!(s.beta(60.0), 1.0);
        assert_eq!(s.beta(99.0), 1.0);
        assert_eq!(s.phase(39.999), Phase::OpenLoop);
        assert_eq!(s.phase(40.0), Phase::Mixing);
        assert_eq!(s.phase(60.0), Phase::ClosedLoop);
        assert_eq!(mix_motor_command(10.0, -7.0, &s, 5.0), 10.0);
        assert_eq!(mix_motor_command(10.0, -7.0, &s, 70.0), -7.0);
        assert_eq!(mix_motor_command(10.0, -6.0, &s, 50.0), 2.0);
        let bad = MixSchedule {
            mix_s: -1.0,
            ..s
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_length_mix_is_a_step() {
        let s = MixSchedule {
            open_s: 1.0,
            mix_s: 0.0,
            closed_s: 1.0,
            ramp: RampShape::Linear,
        };
        assert_eq!(s.beta(0.999), 0.0);
        assert_eq!(s.beta(1.0), 0.0);
        assert_eq!(s.beta(1.0001), 1.0);
    }

    #[test]
    fn weights_file_roundtrip() {
        let mut l = RlsLearner::new(3, 4, 50.0, 2).unwrap();
        l.rls_update(&[1.0, 0.5, 0.2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = l.to_file(&MixSchedule::default());
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        let g = WeightsFile::read(&buf[..]).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.learner().unwrap().weights(), l.weights());
        let mut bad = g.clone();
        bad.version = 99;
        let mut buf = Vec::new();
        bad.write(&mut buf).unwrap();
        assert!(WeightsFile::read(&buf[..]).is_err());
    }
}
