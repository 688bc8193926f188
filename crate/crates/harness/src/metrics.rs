//! Trajectory metrics: phase-aligned error, oscillation frequency, cycle
//! regularity and gait classification.

use popforce_core::cpg::{target_trajectories, GaitDefinition};
use popforce_core::Result;

pub type Frame = [f64; 4];

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn column(frames: &[Frame], leg: usize) -> Vec<f64> {
    frames.iter().map(|f| f[leg]).collect()
}

/// Accumulates readout error against a reference that may run ahead of or
/// behind the readouts.
///
/// The signal is cut into windows of two reference periods. In each window
/// one common lag (within half a period) is chosen for all four legs to
/// minimise the squared error, which removes slow phase drift while keeping
/// inter-leg phase errors.
#[derive(Debug, Clone, Default)]
pub struct PhaseAlignedError {
    se: [f64; 4],
    count: usize,
    sum: [f64; 4],
    sumsq: [f64; 4],
}

impl PhaseAlignedError {
    pub fn new() -> Self {
        Self::default()
    }

    /// `reference[margin + k]` is the target at the time of `readouts[k]`;
    /// the reference must extend `margin` samples on both sides.
    pub fn add(&mut self, readouts: &[Frame], reference: &[Frame], margin: usize, period: usize) {
        assert!(reference.len() >= readouts.len() + 2 * margin, "reference too short");
        let period = period.max(2);
        let max_lag = (period / 2).min(margin) as isize;
        let window = 2 * period;
        let mut start = 0;
        while start < readouts.len() {
            let end = (start + window).min(readouts.len());
            if end - start < period && start > 0 {
                // a tail shorter than one period cannot be aligned reliably
                break;
            }
            let seg = &readouts[start..end];
            let mut best = (f64::INFINITY, [0.0; 4]);
            for lag in -max_lag..=max_lag {
                let base = (margin as isize + start as isize + lag) as usize;
                let mut se = [0.0; 4];
                for (k, r) in seg.iter().enumerate() {
                    let t = &reference[base + k];
                    for i in 0..4 {
                        let d = r[i] - t[i];
                        se[i] += d * d;
                    }
                }
                let total: f64 = se.iter().sum();
                if total < best.0 {
                    best = (total, se);
                }
            }
            for i in 0..4 {
                self.se[i] += best.1[i];
            }
            for k in 0..seg.len() {
                let t = &reference[margin + start + k];
                for i in 0..4 {
                    self.sum[i] += t[i];
                    self.sumsq[i] += t[i] * t[i];
                }
            }
            self.count += seg.len();
            start = end;
        }
    }

    /// Root-mean-square error per leg divided by the reference's standard
    /// deviation over the same samples.
    pub fn nrmse(&self) -> Option<[f64; 4]> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        Some(std::array::from_fn(|i| {
            let m = self.sum[i] / n;
            let var = (self.sumsq[i] / n - m * m).max(0.0);
            (self.se[i] / n).sqrt() / var.sqrt()
        }))
    }
}

/// Upward crossings of the mean-removed signal with hysteresis: the signal
/// must first drop below `-0.3 sd`. Returned as fractional sample indices.
pub fn upward_crossings(signal: &[f64]) -> Vec<f64> {
    if signal.len() < 3 {
        return Vec::new();
    }
    let m = mean(signal);
    let h = 0.3 * std_dev(signal);
    if h <= 0.0 {
        return Vec::new();
    }
    let mut armed = false;
    let mut out = Vec::new();
    for k in 1..signal.len() {
        let (a, b) = (signal[k - 1] - m, signal[k] - m);
        if b < -h {
            armed = true;
        }
        if armed && a < 0.0 && b >= 0.0 {
            out.push((k - 1) as f64 + (-a) / (b - a));
            armed = false;
        }
    }
    out
}

/// Fundamental frequency (Hz) from the median interval between upward
/// crossings; `None` with fewer than two intervals.
pub fn dominant_frequency(signal: &[f64], dt_s: f64) -> Option<f64> {
    let ups = upward_crossings(signal);
    if ups.len() < 3 {
        return None;
    }
    let mut iv: Vec<f64> = ups.windows(2).map(|w| w[1] - w[0]).collect();
    iv.sort_by(f64::total_cmp);
    let n = iv.len();
    let median = if n % 2 == 1 {
        iv[n / 2]
    } else {
        0.5 * (iv[n / 2 - 1] + iv[n / 2])
    };
    Some(1.0 / (median * dt_s))
}

fn sample(frames: &[Frame], x: f64, leg: usize) -> f64 {
    let i = (x.floor() as usize).min(frames.len() - 1);
    let j = (i + 1).min(frames.len() - 1);
    let f = x - i as f64;
    frames[i][leg] * (1.0 - f) + frames[j][leg] * f
}

/// One consecutive-cycle comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclePair {
    /// Sample index where the first cycle starts.
    pub start: f64,
    /// Sample index where the second cycle ends.
    pub end: f64,
    pub correlation: f64,
}

/// Correlation between consecutive cycles of all four legs. Cycles run
/// between upward crossings of the front-left signal and are resampled to
/// 50 points per leg.
pub fn cycle_correlations(frames: &[Frame]) -> Vec<CyclePair> {
    const POINTS: usize = 50;
    let ups = upward_crossings(&column(frames, 0));
    let mut out = Vec::new();
    for w in ups.windows(3) {
        let mut a = Vec::with_capacity(4 * POINTS);
        let mut b = Vec::with_capacity(4 * POINTS);
        for leg in 0..4 {
            for q in 0..POINTS {
                let u = q as f64 / POINTS as f64;
                a.push(sample(frames, w[0] + (w[1] - w[0]) * u, leg));
                b.push(sample(frames, w[1] + (w[2] - w[1]) * u, leg));
            }
        }
        out.push(CyclePair {
            start: w[0],
            end: w[2],
            correlation: pearson(&a, &b),
        });
    }
    out
}

/// Summary of cycle regularity over a stretch of signal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Periodicity {
    pub cycles: usize,
    pub min_correlation: f64,
    pub mean_correlation: f64,
}

pub fn periodicity(frames: &[Frame]) -> Periodicity {
    let cc = cycle_correlations(frames);
    if cc.is_empty() {
        return Periodicity {
            cycles: 0,
            min_correlation: 0.0,
            mean_correlation: 0.0,
        };
    }
    let vals: Vec<f64> = cc.iter().map(|c| c.correlation).collect();
    Periodicity {
        cycles: cc.len(),
        min_correlation: vals.iter().copied().fold(f64::INFINITY, f64::min),
        mean_correlation: mean(&vals),
    }
}

/// Time (in samples after `from`) at which the output has become periodic:
/// the start of the first cycle pair beginning at or after `from` from which
/// every later pair correlates above `limit`. Requires at least `min_pairs`
/// good pairs; `None` if that never happens.
pub fn recovery_samples(frames: &[Frame], from: usize, limit: f64, min_pairs: usize) -> Option<f64> {
    let tail = &frames[from.min(frames.len())..];
    let cc = cycle_correlations(tail);
    let mut first_good = None;
    for (i, c) in cc.iter().enumerate().rev() {
        if c.correlation > limit {
            first_good = Some(i);
        } else {
            break;
        }
    }
    let i = first_good?;
    if cc.len() - i < min_pairs {
        return None;
    }
    Some(cc[i].start)
}

/// One steady-state cycle of a gait's targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub frames: Vec<Frame>,
}

impl Template {
    /// Samples the last cycle of a 20 s run, well after phase locking.
    pub fn from_gait(gait: &GaitDefinition, dt_ms: f64) -> Result<Self> {
        let trace = target_trajectories(gait, 20.0, dt_ms)?;
        let period = ((1000.0 / gait.frequency_hz) / dt_ms).round() as usize;
        let n = trace.len();
        let frames = (n - period..n).map(|k| trace.at(k)).collect();
        Ok(Self { frames })
    }

    pub fn period(&self) -> usize {
        self.frames.len()
    }

    /// Best correlation between the window (all legs) and the template over
    /// cyclic shifts.
    pub fn score(&self, window: &[Frame]) -> f64 {
        let p = self.frames.len();
        let a: Vec<f64> = (0..4).flat_map(|i| window.iter().map(move |f| f[i])).collect();
        let stride = (p / 200).max(1);
        let mut best = -1.0f64;
        let mut b = vec![0.0; a.len()];
        for s in (0..p).step_by(stride) {
            for i in 0..4 {
                for k in 0..window.len() {
                    b[i * window.len() + k] = self.frames[(k + s) % p][i];
                }
            }
            best = best.max(pearson(&a, &b));
        }
        best
    }
}

/// Index of the best-matching template and every score.
pub fn classify(window: &[Frame], templates: &[Template]) -> (usize, Vec<f64>) {
    let scores: Vec<f64> = templates.iter().map(|t| t.score(window)).collect();
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (best, scores)
}

/// Correlation of front-left with front-right and hind-left with hind-right.
pub fn pair_correlations(frames: &[Frame]) -> (f64, f64) {
    (
        pearson(&column(frames, 0), &column(frames, 1)),
        pearson(&column(frames, 2), &column(frames, 3)),
    )
}

/// Whether a gait moves both legs of each pair together.
pub fn is_bounding(gait: &GaitDefinition) -> bool {
    let c = &gait.coupling;
    let wrap = |d: f64| (d + 180.0).rem_euclid(360.0) - 180.0;
    wrap(c.po_fr).abs() < 1e-6 && wrap(c.po_hl - c.po_hr).abs() < 1e-6
}
