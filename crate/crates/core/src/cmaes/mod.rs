//! Covariance matrix adaptation evolution strategy (maximisation).
//!
//! Rank-one plus rank-mu covariance update with cumulative step-size
//! adaptation. Default strategy parameters, for dimension `n`, population
//! `lambda` and `mu = lambda / 2` parents:
//!
//! ```text
//! w_i     = ln((lambda + 1) / 2) - ln(i), normalised to sum 1
//! mu_eff  = 1 / sum(w_i^2)
//! c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
//! d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
//! c_c     = (4 + mu_eff / n) / (n + 4 + 2 mu_eff / n)
//! c_1     = 2 / ((n + 1.3)^2 + mu_eff)
//! c_mu    = min(1 - c_1, 2 (mu_eff - 2 + 1 / mu_eff) / ((n + 2)^2 + mu_eff))
//! ```
//!
//! Only fitness ranks enter the update, so any monotone transformation of the
//! fitness leaves the search trajectory unchanged.

mod gait_space;

pub use gait_space::{
    optimize_gait, GaitParam, GaitSearchResult, GaitSearchSpace, GenerationLog, ParamRange,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SimError};
use crate::rng::{stream_rng, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaesConfig {
    pub dimension: usize,
    /// Per-dimension initial mean; empty means 0.5 everywhere.
    pub init_mean: Vec<f64>,
    /// Per-dimension initial standard deviation; empty means 0.2 everywhere.
    pub init_sd: Vec<f64>,
    pub population: usize,
    /// Optional per-dimension box, applied only when decoding candidates.
    pub bounds: Vec<[f64; 2]>,
    pub max_generations: usize,
    pub seed: u64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self {
            dimension: 9,
            init_mean: Vec::new(),
            init_sd: Vec::new(),
            population: 25,
            bounds: Vec::new(),
            max_generations: 20,
            seed: 0,
        }
    }
}

impl CmaesConfig {
    pub fn mean0(&self) -> Vec<f64> {
        if self.init_mean.is_empty() {
            vec![0.5; self.dimension]
        } else {
            self.init_mean.clone()
        }
    }

    pub fn sd0(&self) -> Vec<f64> {
        if self.init_sd.is_empty() {
            vec![0.2; self.dimension]
        } else {
            self.init_sd.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(invalid("dimension", "must be >= 1"));
        }
        if self.population < 4 {
            return Err(invalid("population", "must be >= 4"));
        }
        let (m, s) = (self.mean0(), self.sd0());
        if m.len() != self.dimension || s.len() != self.dimension {
            return Err(SimError::DimensionMismatch {
                what: "initial mean/sd",
                expected: self.dimension,
                got: m.len().min(s.len()),
            });
        }
        if s.iter().any(|x| !(*x > 0.0)) {
            return Err(invalid("init_sd", "must be > 0"));
        }
        if !self.bounds.is_empty() {
            if self.bounds.len() != self.dimension {
                return Err(SimError::DimensionMismatch {
                    what: "bounds",
                    expected: self.dimension,
                    got: self.bounds.len(),
                });
            }
            if self.bounds.iter().any(|[lo, hi]| !(lo < hi)) {
                return Err(invalid("bounds", "lo must be < hi"));
            }
        }
        Ok(())
    }

    /// Clamps a candidate into the configured box (identity without bounds).
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        if self.bounds.is_empty() {
            return x.to_vec();
        }
        x.iter()
            .zip(&self.bounds)
            .map(|(v, [lo, hi])| v.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CmaesState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub generation: usize,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    seed: u64,
}

impl CmaesState {
    pub fn new(cfg: &CmaesConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.dimension;
        let nf = n as f64;
        let lambda = cfg.population;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

        let sd = cfg.sd0();
        let sigma = sd.iter().cloned().fold(0.0, f64::max);
        let diag = DVector::from_iterator(n, sd.iter().map(|s| (s / sigma).powi(2)));
        let cov = DMatrix::from_diagonal(&diag);
        let mut s = Self {
            mean: DVector::from_vec(cfg.mean0()),
            sigma,
            cov,
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            seed: cfg.seed,
        };
        s.decompose();
        Ok(s)
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn population(&self) -> usize {
        self.lambda
    }

    pub fn mu_eff(&self) -> f64 {
        self.mu_eff
    }

    fn decompose(&mut self) {
        let eig = SymmetricEigen::new(self.cov.clone());
        self.scales = eig.eigenvalues.map(|e| e.max(1e-300).sqrt());
        self.basis = eig.eigenvectors;
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone()).eigenvalues.min()
    }

    pub fn cov_norm(&self) -> f64 {
        self.cov.norm()
    }

    /// Draws `count` candidates from `N(mean, sigma^2 C)` using `rng`.
    pub fn sample_with<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        let n = self.dimension();
        (0..count)
            .map(|_| {
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + self.sigma * y).iter().cloned().collect()
            })
            .collect()
    }

    /// This generation's `lambda` candidates; a pure function of seed and
    /// generation counter.
    pub fn ask(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, Domain::Sampler, self.generation as u64);
        self.sample_with(&mut rng, self.lambda)
    }

    /// Updates the distribution from evaluated candidates (higher fitness is
    /// better). Non-finite fitness values rank last.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        let n = self.dimension();
        if candidates.len() != fitness.len() || candidates.len() < self.weights.len() {
            return Err(SimError::DimensionMismatch {
                what: "candidates/fitness",
                expected: candidates.len().max(self.weights.len()),
                got: fitness.len(),
            });
        }
        if let Some(bad) = candidates.iter().find(|c| c.len() != n) {
            return Err(SimError::DimensionMismatch {
                what: "candidate",
                expected: n,
                got: bad.len(),
            });
        }
        let order = rank_descending(fitness);

        let ys: Vec<DVector<f64>> = order
            .iter()
            .take(self.weights.len())
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&ys) {
            y_w += *w * y;
        }
        self.mean += self.sigma * &y_w;

        // C^{-1/2} y_w
        let inv_sqrt = &self.basis * DMatrix::from_diagonal(&self.scales.map(|d| 1.0 / d)) * self.basis.transpose();
        let cs = self.c_sigma;
        self.path_sigma = (1.0 - cs) * &self.path_sigma + (cs * (2.0 - cs) * self.mu_eff).sqrt() * (inv_sqrt * &y_w);
        let ps_norm = self.path_sigma.norm();
        let g = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        let cc = self.c_c;
        self.path_c = (1.0 - cc) * &self.path_c + hs * (cc * (2.0 - cc) * self.mu_eff).sqrt() * &y_w;

        let delta_h = (1.0 - hs) * cc * (2.0 - cc);
        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in self.weights.iter().zip(&ys) {
            rank_mu += *w * y * y.transpose();
        }
        self.cov = (1.0 + self.c_1 * delta_h - self.c_1 - self.c_mu) * &self.cov
            + self.c_1 * &self.path_c * self.path_c.transpose()
            + self.c_mu * rank_mu;
        self.cov = 0.5 * (&self.cov + self.cov.transpose());

        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.generation += 1;
        self.decompose();
        Ok(())
    }
}

/// Indices sorted best first; non-finite values last, ties by index.
pub(crate) fn rank_descending(fitness: &[f64]) -> Vec<usize> {
    let bad = fitness.iter().filter(|f| !f.is_finite()).count();
    if bad > 0 {
        log::warn!("{bad} candidate(s) with non-finite fitness ranked last");
    }
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (fitness[a], fitness[b]);
        match (fa.is_finite(), fb.is_finite()) {
            (true, true) => fb.partial_cmp(&fa).unwrap().then(a.cmp(&b)),
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => a.cmp(&b),
        }
    });
    order
}

/// Summary of a plain maximisation run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub generations: usize,
    pub best_so_far: Vec<f64>,
    pub state: CmaesState,
}

/// Maximises `f` for at most `cfg.max_generations`, stopping early once
/// `stop(state)` returns true after a generation.
pub fn maximize<F, S>(cfg: &CmaesConfig, mut f: F, mut stop: S) -> Result<RunSummary>
where
    F: FnMut(&[f64]) -> f64,
    S: FnMut(&CmaesState) -> bool,
{
    let mut state = CmaesState::new(cfg)?;
    let mut best = state.mean.iter().cloned().collect::<Vec<_>>();
    let mut best_fitness = f64::NEG_INFINITY;
    let mut best_so_far = Vec::new();
    for _ in 0..cfg.max_generations {
        let cands = state.ask();
        let fit: Vec<f64> = cands.iter().map(|c| f(&cfg.clamp(c))).collect();
        for (c, &v) in cands.iter().zip(&fit) {
            if v.is_finite() && v > best_fitness {
                best_fitness = v;
                best = cfg.clamp(c);
            }
        }
        best_so_far.push(best_fitness);
        state.tell(&cands, &fit)?;
        if stop(&state) {
            break;
        }
    }
    Ok(RunSummary {
        best,
        best_fitness,
        generations: state.generation,
        best_so_far,
        state,
    })
}
