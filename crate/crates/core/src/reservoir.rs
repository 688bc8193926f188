//! A 3-D lattice of spiking populations with distance-dependent
//! excitatory-to-excitatory wiring and one shared transmission delay.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result, SimError};
use crate::rng::{stream_rng, Domain};
use crate::spiking::{LocalSynapses, Population, PopulationSpec};

pub const TOPOLOGY_VERSION: u32 = 1;

/// Peak inter-population connection probability (distance zero).
pub const P_CONNECT_MAX: f64 = 0.3;

/// Probability that one excitatory neuron connects to one excitatory neuron of
/// another population at lattice distance `d`: `0.3 * exp(-d^2)`.
pub fn connection_probability(d: f64) -> f64 {
    P_CONNECT_MAX * (-d * d).exp()
}

/// Default lattice: a 3x3 cross-section stacked deep enough for `n` sites.
pub fn default_lattice(n_populations: usize) -> [usize; 3] {
    [3, 3, n_populations.div_ceil(9).max(1)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirConfig {
    pub n_populations: usize,
    pub population: PopulationSpec,
    /// `None` selects [`default_lattice`].
    pub lattice: Option<[usize; 3]>,
    /// Inter-population E->E weight (nA) before `weight_scale`.
    pub inter_weight: f64,
    /// Global excitability knob applied to every inter-population weight.
    pub weight_scale: f64,
    pub delay_ms: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            n_populations: 300,
            population: PopulationSpec::default(),
            lattice: None,
            inter_weight: 0.25,
            weight_scale: 1.25,
            delay_ms: 100.0,
            dt: 1.0,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn lattice_dims(&self) -> [usize; 3] {
        self.lattice
            .unwrap_or_else(|| default_lattice(self.n_populations))
    }

    pub fn delay_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be > 0"));
        }
        let steps = (self.delay_ms / self.dt).round();
        if !(steps >= 1.0) || ((steps * self.dt) - self.delay_ms).abs() > 1e-9 * self.delay_ms.max(1.0) {
            return Err(invalid(
                "delay_ms",
                format!(
                    "{} ms is not a positive multiple of dt = {} ms",
                    self.delay_ms, self.dt
                ),
            ));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterSynapse {
    /// Global neuron index (population * neurons_per_population + local).
    pub source: u32,
    pub target: u32,
    pub weight: f64,
}

/// Aggregate connection counts for one lattice distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceClass {
    pub distance: f64,
    pub population_pairs: usize,
    pub trials: u64,
    pub connections: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityAudit {
    pub classes: Vec<DistanceClass>,
    pub chi_squared: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Full wiring of a reservoir: enough to rebuild it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirTopology {
    pub version: u32,
    pub n_populations: usize,
    pub neurons_per_population: usize,
    pub n_excitatory: usize,
    pub lattice: [usize; 3],
    pub positions: Vec<[usize; 3]>,
    pub delay_ms: f64,
    pub seed: u64,
    pub inter: Vec<InterSynapse>,
    pub intra: Vec<LocalSynapses>,
}

impl ReservoirTopology {
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.positions[a], self.positions[b]);
        let d2: f64 = (0..3)
            .map(|k| {
                let d = pa[k] as f64 - pb[k] as f64;
                d * d
            })
            .sum();
        d2.sqrt()
    }

    pub fn population_of(&self, neuron: u32) -> usize {
        neuron as usize / self.neurons_per_population
    }

    pub fn is_excitatory(&self, neuron: u32) -> bool {
        (neuron as usize % self.neurons_per_population) < self.n_excitatory
    }

    /// Connection counts per distance class and a chi-squared statistic of
    /// observed versus expected counts (classes expecting fewer than 5
    /// connections are excluded from the statistic).
    pub fn audit(&self) -> ConnectivityAudit {
        let mut pair_count: BTreeMap<u64, (f64, usize, u64)> = BTreeMap::new();
        let mut conn = vec![0u64; self.n_populations * self.n_populations];
        for s in &self.inter {
            let a = self.population_of(s.source);
            let b = self.population_of(s.target);
            conn[a * self.n_populations + b] += 1;
        }
        let mut by_class: BTreeMap<u64, u64> = BTreeMap::new();
        let trials_per_pair = (self.n_excitatory * self.n_excitatory) as u64;
        for a in 0..self.n_populations {
            for b in 0..self.n_populations {
                if a == b {
                    continue;
                }
                let d = self.distance(a, b);
                let key = (d * d).round() as u64;
                let e = pair_count.entry(key).or_insert((d, 0, 0));
                e.1 += 1;
                e.2 += trials_per_pair;
                *by_class.entry(key).or_default() += conn[a * self.n_populations + b];
            }
        }
        let mut classes = Vec::new();
        let mut chi2 = 0.0;
        let mut dof = 0;
        for (key, (d, pairs, trials)) in pair_count {
            let p = connection_probability(d);
            let observed = by_class[&key];
            let expected = p * trials as f64;
            if expected >= 5.0 {
                let var = expected * (1.0 - p);
                chi2 += (observed as f64 - expected).powi(2) / var;
                dof += 1;
            }
            classes.push(DistanceClass {
                distance: d,
                population_pairs: pairs,
                trials,
                connections: observed,
                probability: p,
            });
        }
        let p_value = if dof > 0 {
            ChiSquared::new(dof as f64)
                .map(|c| 1.0 - c.cdf(chi2))
                .unwrap_or(f64::NAN)
        } else {
            1.0
        };
        ConnectivityAudit {
            classes,
            chi_squared: chi2,
            degrees_of_freedom: dof,
            p_value,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> std::io::Result<()> {
        serde_json::to_writer(w, self).map_err(std::io::Error::other)
    }

    pub fn read_json<R: Read>(r: R) -> std::io::Result<Self> {
        let t: Self = serde_json::from_reader(r).map_err(std::io::Error::other)?;
        if t.version != TOPOLOGY_VERSION {
            return Err(std::io::Error::other(format!(
                "unsupported topology version {}",
                t.version
            )));
        }
        Ok(t)
    }
}

/// Samples the lattice placement and every synapse. Pure function of the
/// config (including its seed).
pub fn build_topology(cfg: &ReservoirConfig) -> Result<ReservoirTopology> {
    cfg.population.validate()?;
    cfg.delay_steps()?;
    if cfg.n_populations == 0 {
        return Err(invalid("n_populations", "must be >= 1"));
    }
    if !cfg.inter_weight.is_finite() || !cfg.weight_scale.is_finite() {
        return Err(invalid("inter_weight", "must be finite"));
    }
    let dims = cfg.lattice_dims();
    let sites = dims[0] * dims[1] * dims[2];
    if sites < cfg.n_populations {
        return Err(SimError::LatticeTooSmall {
            dims,
            sites,
            populations: cfg.n_populations,
        });
    }
    // raster order: x fastest, then y, then depth
    let positions: Vec<[usize; 3]> = (0..cfg.n_populations)
        .map(|i| {
            [
                i % dims[0],
                (i / dims[0]) % dims[1],
                i / (dims[0] * dims[1]),
            ]
        })
        .collect();

    let npp = cfg.population.n_neurons;
    let n_exc = cfg.population.n_excitatory();
    let weight = cfg.inter_weight * cfg.weight_scale;
    let mut topo = ReservoirTopology {
        version: TOPOLOGY_VERSION,
        n_populations: cfg.n_populations,
        neurons_per_population: npp,
        n_excitatory: n_exc,
        lattice: dims,
        positions,
        delay_ms: cfg.delay_ms,
        seed: cfg.seed,
        inter: Vec::new(),
        intra: Vec::with_capacity(cfg.n_populations),
    };

    let mut rng = stream_rng(cfg.seed, Domain::InterWiring, 0);
    // E->E only: n_exc sources times n_exc targets per ordered pair
    let trials = (n_exc * n_exc) as u64;
    for a in 0..cfg.n_populations {
        for b in 0..cfg.n_populations {
            if a == b {
                continue;
            }
            let p = connection_probability(topo.distance(a, b));
            if p <= 0.0 {
                continue;
            }
            // geometric skipping: exact Bernoulli(p) per trial in O(successes)
            let log_q = (-p).ln_1p();
            let mut skip = || -> f64 {
                let u: f64 = 1.0 - rng.random::<f64>();
                (u.ln() / log_q).floor()
            };
            let mut idx = skip();
            while idx < trials as f64 {
                let i = idx as usize;
                let src = i / n_exc;
                let tgt = i % n_exc;
                topo.inter.push(InterSynapse {
                    source: (a * npp + src) as u32,
                    target: (b * npp + tgt) as u32,
                    weight,
                });
                idx += 1.0 + skip();
            }
        }
    }
    for p in 0..cfg.n_populations {
        let mut r = stream_rng(cfg.seed, Domain::IntraWiring, p as u64);
        topo.intra.push(LocalSynapses::sample(&cfg.population, &mut r));
    }
    Ok(topo)
}

/// Running reservoir: populations, outgoing inter-population wiring and the
/// delay line of in-flight spikes.
pub struct Reservoir {
    topology: ReservoirTopology,
    populations: Vec<Population>,
    out_offsets: Vec<u32>,
    out_targets: Vec<u32>,
    out_weights: Vec<f64>,
    /// `delay_steps` slots, each holding per-neuron synaptic current to deliver.
    ring: Vec<Vec<f64>>,
    tick: u64,
    currents: Vec<f64>,
    counts: Vec<u32>,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Reservoir {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reservoir")
            .field("n_populations", &self.populations.len())
            .field("inter_synapses", &self.topology.inter.len())
            .field("tick", &self.tick)
            .finish()
    }
}

impl Reservoir {
    /// Builds topology and state from the config. `threads <= 1` steps
    /// populations sequentially; results are identical either way.
    pub fn build(cfg: &ReservoirConfig, threads: usize) -> Result<Self> {
        let topo = build_topology(cfg)?;
        let audit = topo.audit();
        if audit.p_value < 1e-4 {
            log::warn!(
                "inter-population connectivity deviates from 0.3*exp(-D^2): chi2 = {:.2} (dof {}), p = {:.2e}",
                audit.chi_squared,
                audit.degrees_of_freedom,
                audit.p_value
            );
        }
        Self::from_topology(topo, &cfg.population, cfg.dt, threads)
    }

    pub fn from_topology(
        topology: ReservoirTopology,
        spec: &PopulationSpec,
        dt: f64,
        threads: usize,
    ) -> Result<Self> {
        if spec.n_neurons != topology.neurons_per_population {
            return Err(SimError::DimensionMismatch {
                what: "neurons per population",
                expected: topology.neurons_per_population,
                got: spec.n_neurons,
            });
        }
        if topology.intra.len() != topology.n_populations {
            return Err(SimError::DimensionMismatch {
                what: "intra-population wiring",
                expected: topology.n_populations,
                got: topology.intra.len(),
            });
        }
        let steps = ReservoirConfig {
            delay_ms: topology.delay_ms,
            dt,
            ..Default::default()
        }
        .delay_steps()?;
        let n_total = topology.n_populations * topology.neurons_per_population;

        let mut populations = Vec::with_capacity(topology.n_populations);
        for (p, intra) in topology.intra.iter().enumerate() {
            let mut s = *spec;
            s.noise.stream = p as u64;
            populations.push(Population::from_parts(&s, intra.clone(), dt, topology.seed)?);
        }

        let mut out_offsets = vec![0u32; n_total + 1];
        for s in &topology.inter {
            if s.source as usize >= n_total || s.target as usize >= n_total {
                return Err(invalid("inter synapse", "neuron index out of range"));
            }
            out_offsets[s.source as usize + 1] += 1;
        }
        for i in 0..n_total {
            out_offsets[i + 1] += out_offsets[i];
        }
        let mut fill = out_offsets.clone();
        let mut out_targets = vec![0u32; topology.inter.len()];
        let mut out_weights = vec![0.0; topology.inter.len()];
        for s in &topology.inter {
            let slot = &mut fill[s.source as usize];
            out_targets[*slot as usize] = s.target;
            out_weights[*slot as usize] = s.weight;
            *slot += 1;
        }

        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| invalid("threads", e.to_string()))?,
            )
        } else {
            None
        };

        Ok(Self {
            populations,
            out_offsets,
            out_targets,
            out_weights,
            ring: vec![vec![0.0; n_total]; steps],
            tick: 0,
            currents: vec![0.0; topology.n_populations],
            counts: vec![0; topology.n_populations],
            pool,
            topology,
        })
    }

    pub fn topology(&self) -> &ReservoirTopology {
        &self.topology
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn population(&self, i: usize) -> &Population {
        &self.populations[i]
    }

    pub fn population_mut(&mut self, i: usize) -> &mut Population {
        &mut self.populations[i]
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn delay_steps(&self) -> usize {
        self.ring.len()
    }

    /// Number of (neuron, slot) entries holding undelivered synaptic current.
    pub fn in_flight(&self) -> usize {
        self.ring
            .iter()
            .map(|slot| slot.iter().filter(|x| **x != 0.0).count())
            .sum()
    }

    /// Undelivered current for `neuron` that arrives `ticks_ahead` ticks from
    /// now (1 = next tick).
    pub fn pending_for(&self, neuron: usize, ticks_ahead: usize) -> f64 {
        let d = self.ring.len();
        assert!(ticks_ahead >= 1 && ticks_ahead <= d);
        self.ring[(self.tick as usize + ticks_ahead - 1) % d][neuron]
    }

    /// Advances every population one tick.
    ///
    /// `injected` lists `(population, current nA)`; repeated entries add up.
    /// Returns the excitatory spike count of every population for this tick.
    pub fn reservoir_step(&mut self, injected: &[(usize, f64)]) -> Result<&[u32]> {
        let n = self.populations.len();
        self.currents.iter_mut().for_each(|c| *c = 0.0);
        for &(pop, current) in injected {
            if pop >= n {
                return Err(SimError::UnknownPopulation {
                    index: pop,
                    count: n,
                });
            }
            crate::error::finite("injected current", current)?;
            self.currents[pop] += current;
        }

        let d = self.ring.len();
        let slot_idx = (self.tick as usize) % d;
        let npp = self.topology.neurons_per_population;
        {
            let slot = &self.ring[slot_idx];
            let currents = &self.currents;
            let work = |(p, (pop, count)): (usize, (&mut Population, &mut u32))| {
                let arrivals = &slot[p * npp..(p + 1) * npp];
                *count = pop.step_with_input(currents[p], Some(arrivals));
            };
            let pops = &mut self.populations;
            let counts = &mut self.counts;
            match &self.pool {
                Some(pool) => pool.install(|| {
                    pops.par_iter_mut()
                        .zip(counts.par_iter_mut())
                        .enumerate()
                        .for_each(work)
                }),
                None => pops
                    .iter_mut()
                    .zip(counts.iter_mut())
                    .enumerate()
                    .for_each(work),
            }
        }

        // The consumed slot is exactly the one due `delay` ticks from now.
        let slot = &mut self.ring[slot_idx];
        slot.iter_mut().for_each(|x| *x = 0.0);
        let n_exc = self.topology.n_excitatory;
        for (p, pop) in self.populations.iter().enumerate() {
            for &k in pop.fired() {
                let k = k as usize;
                if k >= n_exc {
                    continue;
                }
                let g = p * npp + k;
                let lo = self.out_offsets[g] as usize;
                let hi = self.out_offsets[g + 1] as usize;
                for i in lo..hi {
                    slot[self.out_targets[i] as usize] += self.out_weights[i];
                }
            }
        }
        self.tick += 1;
        Ok(&self.counts)
    }
}

/// Picks `k` distinct population indices spread over the lattice, used for
/// dedicated input populations.
pub fn spread_indices(n_populations: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    (0..k)
        .map(|i| ((2 * i + 1) * n_populations / (2 * k)).min(n_populations - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spiking::NoiseDrive;

    fn small_cfg(n: usize, npp: usize, sd: f64, seed: u64) -> ReservoirConfig {
        ReservoirConfig {
            n_populations: n,
            population: PopulationSpec {
                n_neurons: npp,
                noise: NoiseDrive {
                    sd,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn probability_law() {
        assert!((connection_probability(1.0) - 0.110_363_832).abs() < 1e-8);
        assert!(connection_probability(3.0) < 3.71e-5);
        // expected synapses between two 40-neuron populations at D = 3
        let expected = connection_probability(3.0) * 32.0 * 40.0;
        assert!(expected < 0.05);
    }

    #[test]
    fn default_lattice_fits_300() {
        assert_eq!(default_lattice(300), [3, 3, 34]);
        assert_eq!(default_lattice(100), [3, 3, 12]);
        assert_eq!(default_lattice(600), [3, 3, 67]);
    }

    #[test]
    fn lattice_too_small_is_rejected() {
        let cfg = ReservoirConfig {
            lattice: Some([2, 2, 2]),
            ..small_cfg(9, 10, 0.0, 1)
        };
        assert!(matches!(
            build_topology(&cfg),
            Err(SimError::LatticeTooSmall { .. })
        ));
    }

    #[test]
    fn positions_unique_and_synapses_audited() {
        let topo = build_topology(&small_cfg(60, 20, 0.0, 5)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &topo.positions {
            assert!(seen.insert(*p));
        }
        for s in &topo.inter {
            assert!(topo.is_excitatory(s.source));
            assert!(topo.is_excitatory(s.target));
            assert_ne!(topo.population_of(s.source), topo.population_of(s.target));
        }
    }

    #[test]
    fn topology_is_pure_function_of_config() {
        let a = build_topology(&small_cfg(30, 20, 2.0, 11)).unwrap();
        let b = build_topology(&small_cfg(30, 20, 2.0, 11)).unwrap();
        let c = build_topology(&small_cfg(30, 20, 2.0, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.inter, c.inter);
    }

    #[test]
    fn topology_json_roundtrip() {
        let a = build_topology(&small_cfg(12, 10, 2.0, 3)).unwrap();
        let mut buf = Vec::new();
        a.write_json(&mut buf).unwrap();
        let b = ReservoirTopology::read_json(&buf[..]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn silent_reservoir_stays_empty() {
        let mut r = Reservoir::build(&small_cfg(20, 10, 0.0, 1), 1).unwrap();
        for _ in 0..300 {
            let counts = r.reservoir_step(&[]).unwrap();
            assert!(counts.iter().all(|&c| c == 0));
            assert_eq!(r.in_flight(), 0);
        }
    }

    #[test]
    fn unknown_population_rejected() {
        let mut r = Reservoir::build(&small_cfg(5, 10, 0.0, 1), 1).unwrap();
        assert!(matches!(
            r.reservoir_step(&[(5, 0.1)]),
            Err(SimError::UnknownPopulation { index: 5, count: 5 })
        ));
    }

    #[test]
    fn delay_must_be_multiple_of_dt() {
        let cfg = ReservoirConfig {
            delay_ms: 2.5,
            ..small_cfg(5, 10, 0.0, 1)
        };
        assert!(build_topology(&cfg).is_err());
    }

    #[test]
    fn spread_indices_distinct() {
        let v = spread_indices(100, 5);
        assert_eq!(v, vec![10, 30, 50, 70, 90]);
        let mut s = v.clone();
        s.dedup();
        assert_eq!(s.len(), 5);
    }
}
