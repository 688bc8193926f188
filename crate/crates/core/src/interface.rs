//! Analog <-> spike bridge: monitor and readout integrators, sensor current
//! encoding, and sensor/target corruption with low-pass smoothing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, Result, SimError};
use crate::rng::{stream_rng, Domain};
use crate::spiking::{LifParams, LifState, Propagator};

/// A non-spiking leaky integrator (threshold at +inf).
#[derive(Debug, Clone)]
pub struct Integrator {
    prop: Propagator,
    state: LifState,
}

impl Integrator {
    pub fn new(params: &LifParams, dt: f64) -> Result<Self> {
        if params.v_threshold.is_finite() {
            return Err(invalid("v_threshold", "integrators must not spike"));
        }
        Ok(Self {
            prop: Propagator::new(params, dt)?,
            state: LifState::at_rest(params),
        })
    }

    /// Adds `input` (nA of synaptic current) and advances one step.
    #[inline]
    pub fn step(&mut self, input: f64) -> f64 {
        self.state.i_syn += input;
        let fired = self.prop.advance(&mut self.state, 0.0);
        debug_assert!(!fired);
        self.state.v
    }

    pub fn potential(&self) -> f64 {
        self.state.v
    }

    pub fn state(&self) -> &LifState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = LifState::at_rest(self.prop.params());
    }
}

/// Closed-form potential `t` ms after a single synaptic impulse of `weight` nA
/// into an integrator at rest.
pub fn psp(params: &LifParams, weight: f64, t: f64) -> f64 {
    let (tm, ts) = (params.tau_membrane, params.tau_synapse);
    weight / params.capacitance * tm * ts / (tm - ts) * ((-t / tm).exp() - (-t / ts).exp())
}

/// One integrator per population, each fed that population's excitatory
/// spikes with unit weight.
#[derive(Debug, Clone)]
pub struct MonitorBank {
    integrators: Vec<Integrator>,
    potentials: Vec<f64>,
}

impl MonitorBank {
    pub fn new(n_populations: usize, params: &LifParams, dt: f64) -> Result<Self> {
        let proto = Integrator::new(params, dt)?;
        Ok(Self {
            integrators: vec![proto; n_populations],
            potentials: vec![params.v_rest; n_populations],
        })
    }

    pub fn len(&self) -> usize {
        self.integrators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.integrators.is_empty()
    }

    pub fn potentials(&self) -> &[f64] {
        &self.potentials
    }

    /// Feeds one tick of spike counts and returns the new monitor potentials
    /// (mV), i.e. the reservoir state vector.
    pub fn monitor_update(&mut self, spike_counts: &[u32]) -> Result<&[f64]> {
        if spike_counts.len() != self.integrators.len() {
            return Err(SimError::DimensionMismatch {
                what: "spike counts",
                expected: self.integrators.len(),
                got: spike_counts.len(),
            });
        }
        for ((m, &c), v) in self
            .integrators
            .iter_mut()
            .zip(spike_counts)
            .zip(&mut self.potentials)
        {
            *v = m.step(c as f64);
        }
        Ok(&self.potentials)
    }
}

/// Readout potential as the weighted sum of monitor potentials.
///
/// Monitor and readout integrators share parameters and are linear, so this
/// equals routing `weights[m]`-weighted spikes of population `m` into one
/// readout integrator.
pub fn readout_update(weights: &[f64], monitors: &[f64]) -> Result<f64> {
    if weights.len() != monitors.len() {
        return Err(SimError::DimensionMismatch {
            what: "readout weights",
            expected: monitors.len(),
            got: weights.len(),
        });
    }
    Ok(weights.iter().zip(monitors).map(|(w, x)| w * x).sum())
}

/// Affine sensor value -> DC current map with saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorCalibration {
    /// nA per degree.
    pub gain: f64,
    /// degrees
    pub offset: f64,
    pub clamp_low: f64,
    pub clamp_high: f64,
}

impl Default for SensorCalibration {
    fn default() -> Self {
        Self {
            gain: 0.2,
            offset: 25.0,
            clamp_low: -3.0,
            clamp_high: 3.0,
        }
    }
}

impl SensorCalibration {
    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() || self.gain == 0.0 {
            return Err(invalid("gain", "must be finite and nonzero"));
        }
        if !self.offset.is_finite() {
            return Err(invalid("offset", "must be finite"));
        }
        if !(self.clamp_low <= self.clamp_high) {
            return Err(invalid("clamp", "clamp_low must not exceed clamp_high"));
        }
        Ok(())
    }

    pub fn encode_sensor(&self, value: f64) -> Result<f64> {
        finite("sensor value", value)?;
        Ok((self.gain * (value - self.offset)).clamp(self.clamp_low, self.clamp_high))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub gaussian_sd: f64,
    pub impulse_probability: f64,
    pub impulse_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_sd: 1.0,
            impulse_probability: 0.01,
            impulse_amplitude: 10.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn silent() -> Self {
        Self {
            gaussian_sd: 0.0,
            impulse_probability: 0.0,
            impulse_amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.impulse_probability) {
            return Err(invalid("impulse_probability", "must be in [0, 1]"));
        }
        if !(self.gaussian_sd >= 0.0) || !self.impulse_amplitude.is_finite() {
            return Err(invalid("noise", "sd must be >= 0, amplitude finite"));
        }
        Ok(())
    }
}

/// First-order low-pass filter. The state is initialised by the first sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPass {
    cutoff_hz: f64,
    state: Option<f64>,
}

impl LowPass {
    pub fn new(cutoff_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0) {
            return Err(invalid("cutoff_hz", "must be > 0"));
        }
        Ok(Self {
            cutoff_hz,
            state: None,
        })
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    /// Pole of the discretised filter for a step of `dt_ms`.
    pub fn pole(&self, dt_ms: f64) -> f64 {
        (-2.0 * std::f64::consts::PI * self.cutoff_hz * dt_ms * 1e-3).exp()
    }

    pub fn filter(&mut self, x: f64, dt_ms: f64) -> f64 {
        let a = self.pole(dt_ms);
        let y = match self.state {
            None => x,
            Some(y) => a * y + (1.0 - a) * x,
        };
        self.state = Some(y);
        y
    }

    pub fn value(&self) -> Option<f64> {
        self.state
    }
}

/// Noise source plus low-pass for one signal channel.
#[derive(Debug, Clone)]
pub struct SignalChannel {
    noise: NoiseSpec,
    rng: ChaCha8Rng,
    lowpass: LowPass,
    enabled: bool,
}

impl SignalChannel {
    /// `channel` selects an independent random stream under `noise.seed`.
    pub fn new(noise: NoiseSpec, cutoff_hz: f64, channel: u64) -> Result<Self> {
        noise.validate()?;
        Ok(Self {
            noise,
            rng: stream_rng(noise.seed, Domain::SignalNoise, channel),
            lowpass: LowPass::new(cutoff_hz)?,
            enabled: true,
        })
    }

    /// Noise can be switched off (e.g. after learning) without disturbing the
    /// filter state.
    pub fn set_noise_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    pub fn corrupt(&mut self, value: f64) -> f64 {
        if !self.enabled {
            return value;
        }
        let n = &self.noise;
        if n.impulse_probability > 0.0 && self.rng.random::<f64>() < n.impulse_probability {
            let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            return value + sign * n.impulse_amplitude;
        }
        if n.gaussian_sd > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            value + n.gaussian_sd * z
        } else {
            value
        }
    }

    /// Adds noise, then low-pass filters. Returns `(noisy, filtered)`.
    pub fn corrupt_and_filter(&mut self, value: f64, dt_ms: f64) -> (f64, f64) {
        let noisy = self.corrupt(value);
        (noisy, self.lowpass.filter(noisy, dt_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn monitors_decay_to_zero_without_input() {
        let mut bank = MonitorBank::new(3, &LifParams::integrator(), 1.0).unwrap();
        bank.monitor_update(&[5, 0, 2]).unwrap();
        for _ in 0..3000 {
            bank.monitor_update(&[0, 0, 0]).unwrap();
        }
        assert!(bank.potentials().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn monitor_dimension_checked() {
        let mut bank = MonitorBank::new(3, &LifParams::integrator(), 1.0).unwrap();
        assert!(matches!(
            bank.monitor_update(&[1, 2]),
            Err(SimError::DimensionMismatch { .. })
        ));
        assert!(readout_update(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_spike_follows_double_exponential() {
        let p = LifParams::integrator();
        let mut m = Integrator::new(&p, 1.0).unwrap();
        let mut trace = vec![m.step(1.0)];
        for _ in 1..200 {
            trace.push(m.step(0.0));
        }
        for (k, v) in trace.iter().enumerate() {
            let t = (k + 1) as f64;
            assert!((v - psp(&p, 1.0, t)).abs() < 1e-6, "t={t}");
        }
        // continuous peak at tau_m tau_s / (tau_m - tau_s) * ln(tau_m / tau_s)
        let t_peak = 30.0 * 5.5 / 24.5 * (30.0f64 / 5.5).ln();
        let k_peak = trace
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(((k_peak + 1) as f64 - t_peak).abs() <= 1.0);
        assert!(trace[k_peak] <= psp(&p, 1.0, t_peak) + 1e-12);
    }

    #[test]
    fn steady_potential_is_proportional_to_rate() {
        let p = LifParams::integrator();
        let mean_v = |every: usize| {
            let mut m = Integrator::new(&p, 1.0).unwrap();
            let mut acc = 0.0;
            let n = 20_000;
            for k in 0..n {
                let v = m.step(if k % every == 0 { 1.0 } else { 0.0 });
                if k >= n / 2 {
                    acc += v;
                }
            }
            acc / (n / 2) as f64
        };
        let (v1, v2) = (mean_v(10), mean_v(5));
        assert_relative_eq!(v2 / v1, 2.0, max_relative = 0.01);
    }

    #[test]
    fn integrator_rejects_finite_threshold() {
        assert!(Integrator::new(&LifParams::default(), 1.0).is_err());
    }

    #[test]
    fn one_hot_readout_is_the_monitor() {
        let mut bank = MonitorBank::new(4, &LifParams::integrator(), 1.0).unwrap();
        let w = [0.0, 0.0, 1.0, 0.0];
        for t in 0..100u32 {
            let x = bank.monitor_update(&[t % 3, t % 5, t % 7, 1]).unwrap();
            assert_eq!(readout_update(&w, x).unwrap(), x[2]);
            assert_eq!(readout_update(&[0.0; 4], x).unwrap(), 0.0);
        }
    }

    #[test]
    fn sensor_encoding() {
        let cal = SensorCalibration {
            gain: 0.01,
            offset: 0.0,
            clamp_low: -1.0,
            clamp_high: 1.0,
        };
        assert_eq!(SensorCalibration::default().encode_sensor(25.0).unwrap(), 0.0);
        assert_eq!(cal.encode_sensor(0.0).unwrap(), 0.0);
        assert_relative_eq!(cal.encode_sensor(25.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(cal.encode_sensor(1000.0).unwrap(), 1.0);
        assert_eq!(cal.encode_sensor(-1000.0).unwrap(), -1.0);
        assert!(cal.encode_sensor(f64::NAN).is_err());
        let shifted = SensorCalibration {
            offset: 20.0,
            ..cal
        };
        assert_eq!(shifted.encode_sensor(20.0).unwrap(), 0.0);
        assert!(SensorCalibration { gain: 0.0, ..cal }.validate().is_err());
        assert!(SensorCalibration {
            clamp_low: 2.0,
            ..cal
        }
        .validate()
        .is_err());
    }

    #[test]
    fn silent_channel_with_huge_cutoff_is_identity() {
        let mut ch = SignalChannel::new(NoiseSpec::silent(), 1e12, 0).unwrap();
        for k in 0..100 {
            let x = (k as f64 * 0.3).sin() * 40.0;
            let (noisy, y) = ch.corrupt_and_filter(x, 1.0);
            assert_eq!(noisy, x);
            assert!((y - x).abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_certain_displaces_every_sample() {
        let spec = NoiseSpec {
            gaussian_sd: 3.0,
            impulse_probability: 1.0,
            impulse_amplitude: 7.0,
            seed: 4,
        };
        let mut ch = SignalChannel::new(spec, 5.0, 0).unwrap();
        let mut signs = [0; 2];
        for _ in 0..1000 {
            let d = ch.corrupt(10.0) - 10.0;
            assert_eq!(d.abs(), 7.0);
            signs[(d > 0.0) as usize] += 1;
        }
        assert!(signs[0] > 400 && signs[1] > 400);
    }

    #[test]
    fn lowpass_variance_matches_noise_bandwidth_factor() {
        let sd = 2.0;
        let spec = NoiseSpec {
            gaussian_sd: sd,
            impulse_probability: 0.0,
            impulse_amplitude: 0.0,
            seed: 17,
        };
        let cutoff = 5.0;
        let mut ch = SignalChannel::new(spec, cutoff, 0).unwrap();
        let n = 100_000;
        let warm = 1000;
        let mut ys = Vec::with_capacity(n);
        for k in 0..n + warm {
            let (_, y) = ch.corrupt_and_filter(3.0, 1.0);
            if k >= warm {
                ys.push(y);
            }
        }
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // y_n = a y_{n-1} + (1 - a) x_n  =>  var_y / var_x = (1 - a) / (1 + a)
        let a = LowPass::new(cutoff).unwrap().pole(1.0);
        let factor = (1.0 - a) / (1.0 + a);
        assert_relative_eq!(var / (sd * sd), factor, max_relative = 0.10);
        assert!(factor < 0.02);
    }

    #[test]
    fn channel_is_deterministic_per_seed() {
        let spec = NoiseSpec {
            seed: 8,
            ..Default::default()
        };
        let run = || {
            let mut ch = SignalChannel::new(spec, 5.0, 2).unwrap();
            (0..500)
                .map(|k| ch.corrupt_and_filter(k as f64, 1.0).1)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
