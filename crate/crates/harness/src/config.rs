//! Versioned experiment configuration.
//!
//! A config file names an experiment kind and overrides any subset of the
//! preset for that kind and scale. Loading merges the file over the preset,
//! so a written snapshot (which spells out every field) reloads to the same
//! configuration regardless of later preset changes.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use popforce_core::body::Disturbance;
use popforce_core::closed_loop::{RigConfig, TimedDisturbance};
use popforce_core::cmaes::{CmaesConfig, GaitSearchSpace};
use popforce_core::cpg::GaitDefinition;
use popforce_core::force::{MixSchedule, RampShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GaitGeneration,
    SpeedControl,
    GaitTransition,
    GaitSearch,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GaitGeneration => "gait-generation",
            Self::SpeedControl => "speed-control",
            Self::GaitTransition => "gait-transition",
            Self::GaitSearch => "gait-search",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Reservoir sizes and durations of the original experiments.
    Full,
    /// 100 populations of 20 neurons with short phases.
    Ci,
}

/// Every seed an experiment consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master: u64,
    /// Wiring and per-neuron noise.
    pub reservoir: u64,
    pub sensor_noise: u64,
    pub target_noise: u64,
    pub search: u64,
}

impl SeedManifest {
    /// Derived seeds are 63-bit so they fit TOML integers.
    pub fn derive(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        let mut next = || rng.random::<u64>() >> 1;
        Self {
            master,
            reservoir: next(),
            sensor_noise: next(),
            target_noise: next(),
            search: next(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitGenerationSettings {
    pub gait: GaitDefinition,
    /// Closed-loop evaluation after training, s.
    pub eval_s: f64,
    /// Applied during evaluation (episode-local time).
    pub disturbance: Option<TimedDisturbance>,
    pub nrmse_limit: f64,
    pub cycle_correlation_limit: f64,
    pub frequency_tolerance: f64,
    pub recovery_limit_s: f64,
    pub pair_correlation_limit: f64,
    /// Open-loop drive before closed-loop evaluation of stored weights, s.
    pub warmup_s: f64,
}

impl Default for GaitGenerationSettings {
    fn default() -> Self {
        Self {
            gait: GaitDefinition::walking(),
            eval_s: 60.0,
            disturbance: Some(TimedDisturbance {
                at_s: 30.0,
                kind: Disturbance::FreezeThenRelease { duration_ms: 2000.0 },
            }),
            nrmse_limit: 0.2,
            cycle_correlation_limit: 0.9,
            frequency_tolerance: 0.05,
            recovery_limit_s: 10.0,
            pair_correlation_limit: 0.95,
            warmup_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedControlSettings {
    pub gait: GaitDefinition,
    /// Gait frequency paired with each control level, Hz.
    pub frequencies_hz: Vec<f64>,
    pub levels: Vec<f64>,
    /// nA of DC current per control level.
    pub control_gain_na: f64,
    /// Training cycles through the levels in blocks of this length, s.
    pub block_s: f64,
    /// Evaluation visits these level indices, holding each for `hold_s`.
    pub eval_order: Vec<usize>,
    pub hold_s: f64,
    /// Start of each evaluation segment excluded from measurement, s.
    pub settle_s: f64,
    pub frequency_tolerance: f64,
    /// Largest relative spread between segments that hold the same level.
    pub drift_tolerance: f64,
    pub warmup_s: f64,
}

impl Default for SpeedControlSettings {
    fn default() -> Self {
        Self {
            gait: GaitDefinition::walking(),
            frequencies_hz: vec![1.0, 1.44, 2.0],
            levels: vec![1.0, 2.0, 3.5],
            control_gain_na: 0.6,
            block_s: 5.0,
            eval_order: vec![0, 1, 2, 1, 0],
            hold_s: 10.0,
            settle_s: 3.0,
            frequency_tolerance: 0.1,
            drift_tolerance: 0.03,
            warmup_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitTransitionSettings {
    pub gaits: Vec<GaitDefinition>,
    pub levels: Vec<f64>,
    pub control_gain_na: f64,
    pub block_s: f64,
    pub eval_order: Vec<usize>,
    pub hold_s: f64,
    /// Classification window length in gait cycles.
    pub window_cycles: f64,
    pub max_flip_cycles: f64,
    pub warmup_s: f64,
}

impl Default for GaitTransitionSettings {
    fn default() -> Self {
        Self {
            gaits: vec![GaitDefinition::walking(), GaitDefinition::bounding()],
            levels: vec![1.0, 4.0],
            control_gain_na: 0.6,
            block_s: 10.0,
            eval_order: vec![0, 1, 0, 1],
            hold_s: 15.0,
            window_cycles: 2.0,
            max_flip_cycles: 5.0,
            warmup_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchSpaceKind {
    Walking,
    Bounding,
}

impl SearchSpaceKind {
    pub fn space(self) -> GaitSearchSpace {
        match self {
            Self::Walking => GaitSearchSpace::walking(),
            Self::Bounding => GaitSearchSpace::bounding(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSearchSettings {
    pub space: SearchSpaceKind,
    pub cmaes: CmaesConfig,
    /// Open-loop rollout per candidate, s.
    pub rollout_s: f64,
    pub dt_ms: f64,
}

impl Default for GaitSearchSettings {
    fn default() -> Self {
        Self {
            space: SearchSpaceKind::Walking,
            cmaes: CmaesConfig::default(),
            rollout_s: 10.0,
            dt_ms: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    pub scale: Scale,
    /// Master seed; the manifest is derived from it unless given explicitly.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedManifest>,
    /// Worker threads for topology construction and candidate evaluation.
    pub threads: usize,
    pub output_dir: PathBuf,
    /// Training schedule: open loop, mixing ramp, closed loop.
    pub schedule: MixSchedule,
    pub rig: RigConfig,
    pub gait_generation: GaitGenerationSettings,
    pub speed_control: SpeedControlSettings,
    pub gait_transition: GaitTransitionSettings,
    pub gait_search: GaitSearchSettings,
}

impl ExperimentConfig {
    /// Defaults for an experiment kind at a scale.
    pub fn preset(kind: ExperimentKind, scale: Scale) -> Self {
        let mut rig = RigConfig::default();
        // weight_scale keeps (excitatory neurons per population) x scale near 40
        let (pops, neurons, weight_scale) = match (kind, scale) {
            (_, Scale::Ci) => (100, 20, 2.5),
            (ExperimentKind::GaitTransition, Scale::Full) => (600, 100, 0.5),
            (_, Scale::Full) => (300, 40, 1.25),
        };
        rig.reservoir.n_populations = pops;
        rig.reservoir.population.n_neurons = neurons;
        rig.reservoir.weight_scale = weight_scale;

        let phase = |open_s, mix_s, closed_s| MixSchedule {
            open_s,
            mix_s,
            closed_s,
            ramp: RampShape::Linear,
        };
        let schedule = match (kind, scale) {
            (ExperimentKind::GaitGeneration, Scale::Ci) => phase(10.0, 10.0, 10.0),
            (ExperimentKind::GaitGeneration, Scale::Full) => phase(40.0, 40.0, 40.0),
            (ExperimentKind::SpeedControl | ExperimentKind::GaitTransition, _) => phase(100.0, 100.0, 0.0),
            (ExperimentKind::GaitSearch, _) => phase(0.0, 0.0, 0.0),
        };

        let mut gait_generation = GaitGenerationSettings::default();
        if scale == Scale::Ci {
            gait_generation.nrmse_limit = 0.3;
        }
        Self {
            version: CONFIG_VERSION,
            kind,
            scale,
            seed: 1,
            seeds: None,
            threads: 1,
            output_dir: PathBuf::from("runs"),
            schedule,
            rig,
            gait_generation,
            speed_control: SpeedControlSettings::default(),
            gait_transition: GaitTransitionSettings::default(),
            gait_search: GaitSearchSettings::default(),
        }
    }

    /// The explicit manifest, or the one derived from the master seed.
    pub fn seed_manifest(&self) -> SeedManifest {
        self.seeds.unwrap_or_else(|| SeedManifest::derive(self.seed))
    }

    /// Fixes the seed manifest in the config so a snapshot is self-contained.
    pub fn resolve_seeds(&mut self) {
        self.seeds = Some(self.seed_manifest());
    }

    /// Rig config with the manifest's seeds applied.
    pub fn seeded_rig(&self) -> RigConfig {
        let s = self.seed_manifest();
        let mut rig = self.rig.clone();
        rig.reservoir.seed = s.reservoir;
        rig.interface.sensor_noise.seed = s.sensor_noise;
        rig.interface.target_noise.seed = s.target_noise;
        rig
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            );
        }
        if self.seed > i64::MAX as u64 {
            bail!("seed must be below 2^63");
        }
        if let Some(s) = &self.seeds {
            if s.master != self.seed {
                bail!("seeds.master ({}) differs from seed ({})", s.master, self.seed);
            }
        }
        self.schedule.validate()?;
        match self.kind {
            ExperimentKind::GaitGeneration => {
                let g = &self.gait_generation;
                g.gait.validate()?;
                if !(g.eval_s > 0.0) {
                    bail!("gait_generation.eval_s must be > 0");
                }
            }
            ExperimentKind::SpeedControl => {
                let s = &self.speed_control;
                s.gait.validate()?;
                if s.levels.len() != s.frequencies_hz.len() || s.levels.len() < 2 {
                    bail!("speed_control needs matching levels and frequencies_hz (at least two)");
                }
                if s.frequencies_hz.iter().any(|f| !(*f > 0.0)) {
                    bail!("speed_control.frequencies_hz must be > 0");
                }
                check_order(&s.eval_order, s.levels.len(), "speed_control")?;
                if !(s.block_s > 0.0 && s.hold_s > s.settle_s && s.settle_s >= 0.0) {
                    bail!("speed_control needs block_s > 0 and hold_s > settle_s >= 0");
                }
            }
            ExperimentKind::GaitTransition => {
                let t = &self.gait_transition;
                if t.gaits.len() != t.levels.len() || t.gaits.len() < 2 {
                    bail!("gait_transition needs matching gaits and levels (at least two)");
                }
                for g in &t.gaits {
                    g.validate()?;
                }
                check_order(&t.eval_order, t.gaits.len(), "gait_transition")?;
                if !(t.block_s > 0.0 && t.hold_s > 0.0 && t.window_cycles > 0.0) {
                    bail!("gait_transition needs positive block_s, hold_s and window_cycles");
                }
            }
            ExperimentKind::GaitSearch => {
                let s = &self.gait_search;
                s.cmaes.validate()?;
                if !(s.rollout_s > 0.0 && s.dt_ms > 0.0) {
                    bail!("gait_search needs rollout_s > 0 and dt_ms > 0");
                }
            }
        }
        Ok(())
    }

    /// Complete TOML rendering; reloading it reproduces this config.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// sha256 of the complete TOML rendering.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml()?;
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }
}

fn check_order(order: &[usize], n: usize, what: &str) -> Result<()> {
    if order.is_empty() {
        bail!("{what}.eval_order must not be empty");
    }
    if let Some(&bad) = order.iter().find(|&&i| i >= n) {
        bail!("{what}.eval_order index {bad} is out of range");
    }
    Ok(())
}

/// Command-line adjustments applied while loading.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub kind: Option<ExperimentKind>,
    /// Dotted path and TOML value, applied in order.
    pub params: Vec<(String, toml::Value)>,
}

/// Parsed but not yet merged config file.
#[derive(Debug, Clone)]
pub struct ConfigSource {
    table: toml::Table,
}

impl ConfigSource {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self {
            table: text.parse::<toml::Table>()?,
        })
    }

    /// Merges the file over the preset selected by kind and scale.
    pub fn resolve(&self, ov: &Overrides) -> Result<ExperimentConfig> {
        let mut file = self.table.clone();
        let kind = match ov.kind {
            Some(k) => k,
            None => {
                let v = file
                    .get("kind")
                    .ok_or_else(|| anyhow!("config has no `kind`"))?
                    .clone();
                v.try_into().context("unknown experiment kind")?
            }
        };
        let scale = match ov.scale {
            Some(s) => s,
            None => match file.get("scale") {
                Some(v) => v.clone().try_into().context("unknown scale")?,
                None => Scale::Full,
            },
        };
        file.insert("kind".into(), toml::Value::try_from(kind)?);
        file.insert("scale".into(), toml::Value::try_from(scale)?);
        if let Some(seed) = ov.seed {
            file.insert("seed".into(), toml::Value::Integer(seed as i64));
            file.remove("seeds");
        }
        let mut merged = toml::Value::try_from(ExperimentConfig::preset(kind, scale))?;
        merge(&mut merged, toml::Value::Table(file));
        for (path, value) in &ov.params {
            set_path(&mut merged, path, value.clone())?;
        }
        let cfg: ExperimentConfig = merged.try_into().context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load(path: &Path, ov: &Overrides) -> Result<ExperimentConfig> {
    ConfigSource::from_path(path)?.resolve(ov)
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c` inside a table tree, creating intermediate tables.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("bad parameter path `{path}`");
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!()
}

/// Parses a command-line value as a TOML literal, falling back to a string.
pub fn parse_value(text: &str) -> toml::Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.into())),
        Err(_) => toml::Value::String(text.into()),
    }
}
