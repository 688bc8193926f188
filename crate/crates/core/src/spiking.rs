//! Leaky integrate-and-fire neurons with exponentially decaying post-synaptic
//! current, and noise-driven excitatory/inhibitory populations built from them.
//!
//! Units throughout: mV, nA, nF, ms. The membrane obeys
//!
//! ```text
//! dv/dt = (v_rest - v) / tau_m + (i_syn + i_ext) / C
//! di_syn/dt = -i_syn / tau_syn
//! ```
//!
//! and is advanced with the exact propagator over one step of length `dt`,
//! treating `i_ext` as constant over the step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, Result, SimError};
use crate::rng::{stream_rng, Domain};

const REFRACTORY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub v_rest: f64,
    /// May be `f64::INFINITY`, in which case the neuron is a pure leaky integrator.
    pub v_threshold: f64,
    pub v_reset: f64,
    pub capacitance: f64,
    pub tau_membrane: f64,
    pub t_refractory: f64,
    pub tau_synapse: f64,
}

impl Default for LifParams {
    /// Reservoir neuron: rest -65 mV, threshold -50 mV, reset -75 mV,
    /// C = 0.2 nF, tau_m = 30 ms, refractory 2 ms, tau_syn = 0.5 ms.
    fn default() -> Self {
        Self {
            v_rest: -65.0,
            v_threshold: -50.0,
            v_reset: -75.0,
            capacitance: 0.2,
            tau_membrane: 30.0,
            t_refractory: 2.0,
            tau_synapse: 0.5,
        }
    }
}

impl LifParams {
    /// Non-spiking integrator used for monitor and readout neurons.
    pub fn integrator() -> Self {
        Self {
            v_rest: 0.0,
            v_threshold: f64::INFINITY,
            v_reset: 0.0,
            capacitance: 0.2,
            tau_membrane: 30.0,
            t_refractory: 0.0,
            tau_synapse: 5.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacitance > 0.0) {
            return Err(invalid("capacitance", "must be > 0"));
        }
        if !(self.tau_membrane > 0.0) {
            return Err(invalid("tau_membrane", "must be > 0"));
        }
        if !(self.tau_synapse > 0.0) {
            return Err(invalid("tau_synapse", "must be > 0"));
        }
        if !(self.t_refractory >= 0.0) {
            return Err(invalid("t_refractory", "must be >= 0"));
        }
        if self.v_threshold.is_finite() && !(self.v_reset < self.v_threshold) {
            return Err(invalid("v_reset", "must be below a finite threshold"));
        }
        if self.v_threshold.is_nan() || !self.v_rest.is_finite() || !self.v_reset.is_finite() {
            return Err(invalid("v_rest/v_reset/v_threshold", "must be numbers"));
        }
        Ok(())
    }

    /// Input resistance tau_m / C in MOhm (mV per nA).
    pub fn resistance(&self) -> f64 {
        self.tau_membrane / self.capacitance
    }

    /// Steady-state potential under a constant current, ignoring the threshold.
    pub fn steady_state(&self, current: f64) -> f64 {
        self.v_rest + current * self.resistance()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifState {
    pub v: f64,
    pub i_syn: f64,
    pub refractory_remaining: f64,
}

impl LifState {
    pub fn at_rest(params: &LifParams) -> Self {
        Self {
            v: params.v_rest,
            i_syn: 0.0,
            refractory_remaining: 0.0,
        }
    }
}

/// Exact one-step propagator for a fixed `(params, dt)` pair.
#[derive(Debug, Clone, Copy)]
pub struct Propagator {
    params: LifParams,
    dt: f64,
    decay_m: f64,
    decay_s: f64,
    syn_to_v: f64,
    ext_to_v: f64,
}

impl Propagator {
    pub fn new(params: &LifParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        if params.t_refractory > 0.0 && dt > params.t_refractory {
            return Err(invalid(
                "dt",
                format!(
                    "{dt} ms exceeds the refractory period {} ms",
                    params.t_refractory
                ),
            ));
        }
        let tm = params.tau_membrane;
        let ts = params.tau_synapse;
        let decay_m = (-dt / tm).exp();
        let decay_s = (-dt / ts).exp();
        let syn_to_v = if (tm - ts).abs() < 1e-12 * tm {
            dt / params.capacitance * decay_m
        } else {
            tm * ts / (params.capacitance * (tm - ts)) * (decay_m - decay_s)
        };
        let ext_to_v = params.resistance() * (1.0 - decay_m);
        Ok(Self {
            params: *params,
            dt,
            decay_m,
            decay_s,
            syn_to_v,
            ext_to_v,
        })
    }

    pub fn params(&self) -> &LifParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step in place and reports whether the neuron fired.
    #[inline]
    pub fn advance(&self, s: &mut LifState, i_ext: f64) -> bool {
        let p = &self.params;
        if s.refractory_remaining > REFRACTORY_EPS {
            s.v = p.v_reset;
            s.refractory_remaining = (s.refractory_remaining - self.dt).max(0.0);
            if s.refractory_remaining < REFRACTORY_EPS {
                s.refractory_remaining = 0.0;
            }
        } else {
            s.v = p.v_rest
                + (s.v - p.v_rest) * self.decay_m
                + s.i_syn * self.syn_to_v
                + i_ext * self.ext_to_v;
        }
        s.i_syn *= self.decay_s;
        if s.v >= p.v_threshold {
            s.v = p.v_reset;
            s.refractory_remaining = p.t_refractory;
            true
        } else {
            false
        }
    }
}

/// Advances a single neuron by `dt` ms under external current `i_ext` (nA).
///
/// Synaptic input must already have been added to `state.i_syn`.
pub fn lif_step(
    state: &LifState,
    params: &LifParams,
    i_ext: f64,
    dt: f64,
) -> Result<(LifState, bool)> {
    finite("input current", i_ext)?;
    let prop = Propagator::new(params, dt)?;
    let mut next = *state;
    let spiked = prop.advance(&mut next, i_ext);
    Ok((next, spiked))
}

/// Gaussian current drive (nA), resampled independently for every neuron and
/// step. The SD applies per simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDrive {
    pub mean: f64,
    pub sd: f64,
    /// Random stream identifier mixed into the experiment seed.
    #[serde(default)]
    pub stream: u64,
}

impl Default for NoiseDrive {
    fn default() -> Self {
        Self {
            mean: 0.0,
            sd: 0.63,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub n_neurons: usize,
    pub excitatory_fraction: f64,
    pub neuron_params: LifParams,
    pub noise: NoiseDrive,
    /// E->I and I->E connection probabilities inside the population.
    pub p_ei: f64,
    pub p_ie: f64,
    /// Synaptic weights in nA added to the target's synaptic current per spike.
    pub w_ei: f64,
    pub w_ie: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_neurons: 40,
            excitatory_fraction: 0.8,
            neuron_params: LifParams::default(),
            noise: NoiseDrive::default(),
            p_ei: 0.1,
            p_ie: 0.1,
            w_ei: 0.3,
            w_ie: -1.2,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_neurons == 0 {
            return Err(invalid("n_neurons", "must be >= 1"));
        }
        if !(self.excitatory_fraction > 0.0 && self.excitatory_fraction <= 1.0) {
            return Err(invalid("excitatory_fraction", "must be in (0, 1]"));
        }
        if !(self.noise.sd >= 0.0) || !self.noise.mean.is_finite() {
            return Err(invalid("noise", "sd must be >= 0 and mean finite"));
        }
        for (name, p) in [("p_ei", self.p_ei), ("p_ie", self.p_ie)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, "must be a probability"));
            }
        }
        if !self.w_ei.is_finite() || !self.w_ie.is_finite() {
            return Err(invalid("w_ei/w_ie", "must be finite"));
        }
        self.neuron_params.validate()
    }

    /// Excitatory neurons occupy indices `0..n_excitatory()`.
    pub fn n_excitatory(&self) -> usize {
        let n = (self.n_neurons as f64 * self.excitatory_fraction).round() as usize;
        n.clamp(1, self.n_neurons)
    }
}

/// Outgoing synapses of every neuron, in compressed row form (local indices).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalSynapses {
    pub offsets: Vec<u32>,
    pub targets: Vec<u32>,
    pub weights: Vec<f64>,
}

impl LocalSynapses {
    pub fn outgoing(&self, neuron: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.offsets[neuron] as usize;
        let hi = self.offsets[neuron + 1] as usize;
        self.targets[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&t, &w)| (t as usize, w))
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Draws E->I and I->E synapses with the spec's probabilities.
    pub fn sample<R: Rng>(spec: &PopulationSpec, rng: &mut R) -> Self {
        let n = spec.n_neurons;
        let n_exc = spec.n_excitatory();
        let mut out = LocalSynapses {
            offsets: Vec::with_capacity(n + 1),
            ..Default::default()
        };
        out.offsets.push(0);
        for src in 0..n {
            let (range, p, w) = if src < n_exc {
                (n_exc..n, spec.p_ei, spec.w_ei)
            } else {
                (0..n_exc, spec.p_ie, spec.w_ie)
            };
            for tgt in range {
                if rng.random::<f64>() < p {
                    out.targets.push(tgt as u32);
                    out.weights.push(w);
                }
            }
            out.offsets.push(out.targets.len() as u32);
        }
        out
    }
}

/// A group of LIF neurons sharing parameters, intra-population wiring and a
/// private noise stream.
#[derive(Debug, Clone)]
pub struct Population {
    n_exc: usize,
    prop: Propagator,
    states: Vec<LifState>,
    synapses: LocalSynapses,
    pending: Vec<f64>,
    fired: Vec<u32>,
    noise_mean: f64,
    noise_sd: f64,
    rng: ChaCha8Rng,
}

impl Population {
    /// Builds a population with freshly sampled intra-population wiring.
    ///
    /// Wiring and noise use distinct streams derived from `seed` and
    /// `spec.noise.stream`.
    pub fn new(spec: &PopulationSpec, dt: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut wiring_rng = stream_rng(seed, Domain::IntraWiring, spec.noise.stream);
        let synapses = LocalSynapses::sample(spec, &mut wiring_rng);
        Self::from_parts(spec, synapses, dt, seed)
    }

    pub fn from_parts(
        spec: &PopulationSpec,
        synapses: LocalSynapses,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if synapses.offsets.len() != spec.n_neurons + 1 {
            return Err(SimError::DimensionMismatch {
                what: "intra-population synapse offsets",
                expected: spec.n_neurons + 1,
                got: synapses.offsets.len(),
            });
        }
        let prop = Propagator::new(&spec.neuron_params, dt)?;
        Ok(Self {
            n_exc: spec.n_excitatory(),
            prop,
            states: vec![LifState::at_rest(&spec.neuron_params); spec.n_neurons],
            synapses,
            pending: vec![0.0; spec.n_neurons],
            fired: Vec::new(),
            noise_mean: spec.noise.mean,
            noise_sd: spec.noise.sd,
            rng: stream_rng(seed, Domain::NeuronNoise, spec.noise.stream),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_excitatory(&self) -> usize {
        self.n_exc
    }

    pub fn states(&self) -> &[LifState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [LifState] {
        &mut self.states
    }

    pub fn synapses(&self) -> &LocalSynapses {
        &self.synapses
    }

    /// Local indices of every neuron that fired during the last step.
    pub fn fired(&self) -> &[u32] {
        &self.fired
    }

    /// Advances all members one step with `external_current` applied to each.
    /// Returns the number of excitatory spikes.
    pub fn population_step(&mut self, external_current: f64) -> u32 {
        self.step_with_input(external_current, None)
    }

    /// As [`population_step`](Self::population_step), additionally adding
    /// `arrivals[k]` (nA) to neuron `k`'s synaptic current before the update.
    pub fn step_with_input(&mut self, external_current: f64, arrivals: Option<&[f64]>) -> u32 {
        for (k, s) in self.states.iter_mut().enumerate() {
            s.i_syn += self.pending[k];
            self.pending[k] = 0.0;
        }
        if let Some(a) = arrivals {
            for (s, &x) in self.states.iter_mut().zip(a) {
                s.i_syn += x;
            }
        }
        self.fired.clear();
        let mut exc_spikes = 0;
        for k in 0..self.states.len() {
            let noise = if self.noise_sd > 0.0 {
                let z: f64 = self.rng.sample(StandardNormal);
                self.noise_mean + self.noise_sd * z
            } else {
                self.noise_mean
            };
            if self.prop.advance(&mut self.states[k], external_current + noise) {
                self.fired.push(k as u32);
                if k < self.n_exc {
                    exc_spikes += 1;
                }
            }
        }
        for &k in &self.fired {
            let k = k as usize;
            let lo = self.synapses.offsets[k] as usize;
            let hi = self.synapses.offsets[k + 1] as usize;
            for idx in lo..hi {
                self.pending[self.synapses.targets[idx] as usize] += self.synapses.weights[idx];
            }
        }
        exc_spikes
    }
}
