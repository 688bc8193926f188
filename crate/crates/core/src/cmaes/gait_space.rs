use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CmaesConfig, CmaesState};
use crate::cpg::GaitDefinition;
use crate::error::{invalid, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitParam {
    FrontAmplitude,
    HindAmplitude,
    FrontDuty,
    HindDuty,
    FrontOffset,
    HindOffset,
    PoFr,
    PoHl,
    PoHr,
    /// Sets both hind phase offsets to the same value.
    PoHind,
}

impl GaitParam {
    pub fn apply(self, gait: &mut GaitDefinition, value: f64) {
        match self {
            GaitParam::FrontAmplitude => gait.front.amplitude = value,
            GaitParam::HindAmplitude => gait.hind.amplitude = value,
            GaitParam::FrontDuty => gait.front.duty = value,
            GaitParam::HindDuty => gait.hind.duty = value,
            GaitParam::FrontOffset => gait.front.offset = value,
            GaitParam::HindOffset => gait.hind.offset = value,
            GaitParam::PoFr => gait.coupling.po_fr = value,
            GaitParam::PoHl => gait.coupling.po_hl = value,
            GaitParam::PoHr => gait.coupling.po_hr = value,
            GaitParam::PoHind => {
                gait.coupling.po_hl = value;
                gait.coupling.po_hr = value;
            }
        }
    }

    pub fn read(self, gait: &GaitDefinition) -> f64 {
        match self {
            GaitParam::FrontAmplitude => gait.front.amplitude,
            GaitParam::HindAmplitude => gait.hind.amplitude,
            GaitParam::FrontDuty => gait.front.duty,
            GaitParam::HindDuty => gait.hind.duty,
            GaitParam::FrontOffset => gait.front.offset,
            GaitParam::HindOffset => gait.hind.offset,
            GaitParam::PoFr => gait.coupling.po_fr,
            GaitParam::PoHl | GaitParam::PoHind => gait.coupling.po_hl,
            GaitParam::PoHr => gait.coupling.po_hr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub param: GaitParam,
    pub lo: f64,
    pub hi: f64,
}

/// Maps a search vector (nominally in `[0, 1]` per component) onto gait
/// parameters through per-parameter affine range maps. Components are
/// clamped to `[0, 1]` first, so decoded values always stay in range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSearchSpace {
    /// Values for everything not searched (frequency, coupling strengths, ...).
    pub base: GaitDefinition,
    pub params: Vec<ParamRange>,
}

impl GaitSearchSpace {
    /// The nine-parameter walking search space at a fixed 1.44 Hz.
    pub fn walking() -> Self {
        use GaitParam::*;
        let r = |param, lo, hi| ParamRange { param, lo, hi };
        Self {
            base: GaitDefinition::walking(),
            params: vec![
                r(FrontAmplitude, 20.0, 140.0),
                r(HindAmplitude, 20.0, 140.0),
                r(FrontDuty, 0.15, 0.85),
                r(HindDuty, 0.15, 0.85),
                r(FrontOffset, -60.0, 60.0),
                r(HindOffset, -60.0, 60.0),
                r(PoFr, 150.0, 210.0),
                r(PoHl, 240.0, 300.0),
                r(PoHr, 60.0, 120.0),
            ],
        }
    }

    /// Bounding: front pair near in phase, hind pair tied together.
    pub fn bounding() -> Self {
        use GaitParam::*;
        let r = |param, lo, hi| ParamRange { param, lo, hi };
        Self {
            base: GaitDefinition::bounding(),
            params: vec![
                r(FrontAmplitude, 20.0, 140.0),
                r(HindAmplitude, 20.0, 140.0),
                r(FrontDuty, 0.15, 0.85),
                r(HindDuty, 0.15, 0.85),
                r(FrontOffset, -60.0, 60.0),
                r(HindOffset, -60.0, 60.0),
                r(PoFr, -10.0, 10.0),
                r(PoHind, 150.0, 210.0),
            ],
        }
    }

    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.params.is_empty() {
            return Err(invalid("params", "search space is empty"));
        }
        for p in &self.params {
            if !(p.lo < p.hi) {
                return Err(invalid("params", format!("{:?}: lo must be < hi", p.param)));
            }
        }
        Ok(())
    }

    pub fn decode(&self, x: &[f64]) -> Result<GaitDefinition> {
        if x.len() != self.params.len() {
            return Err(SimError::DimensionMismatch {
                what: "search vector",
                expected: self.params.len(),
                got: x.len(),
            });
        }
        let mut g = self.base;
        for (p, &v) in self.params.iter().zip(x) {
            let u = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 };
            p.param.apply(&mut g, p.lo + u * (p.hi - p.lo));
        }
        Ok(g)
    }

    pub fn encode(&self, gait: &GaitDefinition) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| (p.param.read(gait) - p.lo) / (p.hi - p.lo))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best: f64,
    pub median: f64,
    pub sigma: f64,
    pub cov_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSearchResult {
    pub best_gait: GaitDefinition,
    pub best_fitness: f64,
    pub best_vector: Vec<f64>,
    pub history: Vec<GenerationLog>,
}

impl GaitSearchResult {
    /// One row per generation: `generation,best,median,sigma,cov_norm`.
    pub fn write_log_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "generation,best,median,sigma,cov_norm")?;
        for g in &self.history {
            writeln!(
                w,
                "{},{},{},{},{}",
                g.generation, g.best, g.median, g.sigma, g.cov_norm
            )?;
        }
        Ok(())
    }
}

/// Runs ask/tell generations over the gait space, maximising `evaluator`.
///
/// The evaluator receives the decoded gait and a per-candidate seed. Errors
/// become the worst possible fitness. Candidates are evaluated on `threads`
/// worker threads; the result does not depend on the thread count.
pub fn optimize_gait<E>(
    space: &GaitSearchSpace,
    evaluator: E,
    config: &CmaesConfig,
    threads: usize,
) -> Result<GaitSearchResult>
where
    E: Fn(&GaitDefinition, u64) -> std::result::Result<f64, String> + Sync,
{
    space.validate()?;
    let mut cfg = config.clone();
    cfg.dimension = space.dimension();
    let mut state = CmaesState::new(&cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| invalid("threads", e.to_string()))?;

    let mut best: Option<(f64, Vec<f64>, GaitDefinition)> = None;
    let mut history = Vec::with_capacity(cfg.max_generations);
    for generation in 0..cfg.max_generations {
        let cands = state.ask();
        let gaits: Vec<GaitDefinition> = cands
            .iter()
            .map(|c| space.decode(c))
            .collect::<Result<_>>()?;
        let eval_one = |(i, g): (usize, &GaitDefinition)| {
            let seed = candidate_seed(cfg.seed, generation, i);
            match evaluator(g, seed) {
                Ok(f) if f.is_finite() => f,
                Ok(f) => {
                    log::warn!("generation {generation} candidate {i}: non-finite fitness {f}");
                    f64::NEG_INFINITY
                }
                Err(e) => {
                    log::warn!("generation {generation} candidate {i}: evaluation failed: {e}");
                    f64::NEG_INFINITY
                }
            }
        };
        let fitness: Vec<f64> = if threads > 1 {
            pool.install(|| gaits.par_iter().enumerate().map(eval_one).collect())
        } else {
            gaits.iter().enumerate().map(eval_one).collect()
        };

        for (i, &f) in fitness.iter().enumerate() {
            let better = match &best {
                None => true,
                Some((bf, _, _)) => f > *bf,
            };
            if better {
                best = Some((f, cands[i].clone(), gaits[i]));
            }
        }
        let mut sorted: Vec<f64> = fitness.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        history.push(GenerationLog {
            generation,
            best: sorted[0],
            median: sorted[sorted.len() / 2],
            sigma: state.sigma,
            cov_norm: state.cov_norm(),
        });
        state.tell(&cands, &fitness)?;
    }
    let (best_fitness, best_vector, best_gait) = best.ok_or_else(|| invalid("max_generations", "must be >= 1"))?;
    Ok(GaitSearchResult {
        best_gait,
        best_fitness,
        best_vector,
        history,
    })
}

pub fn candidate_seed(seed: u64, generation: usize, index: usize) -> u64 {
    // splitmix64 finaliser over the packed triple
    let mut z = seed ^ ((generation as u64) << 20) ^ (index as u64) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
