//! The four experiment kinds: train (or load) readouts, run the closed-loop
//! evaluation and measure it.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use popforce_core::body::{Body, Disturbance};
use popforce_core::closed_loop::{run_episode, ControlInputPlan, Episode, Rig, TimedDisturbance, TraceRow};
use popforce_core::cmaes::{optimize_gait, GaitSearchResult};
use popforce_core::cpg::{scheduled_trajectories, target_trajectories, GaitDefinition, TargetTrace};
use popforce_core::force::{train_gait, MixSchedule, RampShape, RlsLearner, WeightsFile};
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, SearchSpaceKind};
use crate::metrics::{
    classify, column, dominant_frequency, is_bounding, pair_correlations, periodicity, recovery_samples, Frame,
    PhaseAlignedError, Template,
};
use crate::report::{Check, Comparison, FrequencyRow, ReadoutNrmse, Report, Status};

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// The configuration with its seed manifest fixed.
    pub config: ExperimentConfig,
    pub report: Report,
    pub trace: Vec<TraceRow>,
    pub weights: Option<WeightsFile>,
    pub search: Option<GaitSearchResult>,
}

/// Where the readout weights come from.
#[derive(Debug, Clone)]
pub enum Start {
    /// Train from scratch with the configured schedule.
    Train,
    /// Use stored weights after an open-loop warm-up.
    Weights(WeightsFile),
}

/// Trains (or loads) and evaluates a closed-loop experiment.
pub fn run(cfg: &ExperimentConfig, start: Start) -> Result<RunOutput> {
    let mut cfg = cfg.clone();
    cfg.resolve_seeds();
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::GaitGeneration => gait_generation(cfg, start),
        ExperimentKind::SpeedControl => speed_control(cfg, start),
        ExperimentKind::GaitTransition => gait_transition(cfg, start),
        ExperimentKind::GaitSearch => match start {
            Start::Train => gait_search(cfg),
            Start::Weights(_) => bail!("gait-search does not use readout weights"),
        },
    }
}

pub fn closed_loop_schedule() -> MixSchedule {
    MixSchedule {
        open_s: 0.0,
        mix_s: 0.0,
        closed_s: 1e12,
        ramp: RampShape::Linear,
    }
}

fn open_loop_schedule() -> MixSchedule {
    MixSchedule {
        open_s: 1e12,
        mix_s: 0.0,
        closed_s: 0.0,
        ramp: RampShape::Linear,
    }
}

pub fn period_samples(frequency_hz: f64, dt_ms: f64) -> usize {
    ((1000.0 / frequency_hz) / dt_ms).round().max(2.0) as usize
}

fn ticks(duration_s: f64, dt_ms: f64) -> usize {
    (duration_s * 1000.0 / dt_ms).round() as usize
}

fn slice(t: &TargetTrace, from: usize, len: usize) -> TargetTrace {
    TargetTrace {
        dt_ms: t.dt_ms,
        time_s: (0..len).map(|k| k as f64 * t.dt_ms * 1e-3).collect(),
        legs: std::array::from_fn(|i| t.legs[i][from..from + len].to_vec()),
    }
}

/// Gait and control level from `start_s` until the next segment.
#[derive(Debug, Clone, Copy)]
struct Segment {
    start_s: f64,
    gait: GaitDefinition,
    level: f64,
}

#[derive(Debug, Clone)]
struct Plan {
    segments: Vec<Segment>,
    duration_s: f64,
}

impl Plan {
    fn single(gait: GaitDefinition, level: f64, duration_s: f64) -> Self {
        Self {
            segments: vec![Segment {
                start_s: 0.0,
                gait,
                level,
            }],
            duration_s,
        }
    }

    /// Fixed-length blocks cycling through `(gait, level)` choices.
    fn cycling(choices: &[(GaitDefinition, f64)], block_s: f64, duration_s: f64) -> Self {
        let blocks = ((duration_s / block_s).ceil() as usize).max(1);
        let segments = (0..blocks)
            .map(|b| {
                let (gait, level) = choices[b % choices.len()];
                Segment {
                    start_s: b as f64 * block_s,
                    gait,
                    level,
                }
            })
            .collect();
        Self { segments, duration_s }
    }

    /// Visits `choices[order[i]]` for `hold_s` each.
    fn sequence(choices: &[(GaitDefinition, f64)], order: &[usize], hold_s: f64) -> Self {
        let segments = order
            .iter()
            .enumerate()
            .map(|(i, &c)| Segment {
                start_s: i as f64 * hold_s,
                gait: choices[c].0,
                level: choices[c].1,
            })
            .collect();
        Self {
            segments,
            duration_s: hold_s * order.len() as f64,
        }
    }

    /// Targets covering the plan plus `margin` samples on both sides, during
    /// which the first and last gait continue.
    fn targets(&self, dt_ms: f64, margin: usize) -> Result<TargetTrace> {
        let margin_s = margin as f64 * dt_ms * 1e-3;
        let mut segs: Vec<(f64, GaitDefinition)> = self
            .segments
            .iter()
            .map(|s| (s.start_s + margin_s, s.gait))
            .collect();
        segs[0].0 = 0.0;
        let n = ticks(self.duration_s, dt_ms);
        let total_s = (n + 2 * margin) as f64 * dt_ms * 1e-3;
        Ok(scheduled_trajectories(&segs, total_s, dt_ms)?)
    }

    fn control(&self, gain_na: f64) -> ControlInputPlan {
        ControlInputPlan {
            segments: self.segments.iter().map(|s| (s.start_s, s.level)).collect(),
            gain_na,
        }
    }
}

/// Readouts of one episode and the matching reference targets, which extend
/// `margin` samples beyond each end: `reference[margin + k]` pairs with
/// `readouts[k]`.
struct Driven {
    readouts: Vec<Frame>,
    reference: Vec<Frame>,
    margin: usize,
    error: Option<String>,
}

/// A rig and the trace accumulated across its episodes.
struct Session {
    rig: Rig,
    trace: Vec<TraceRow>,
    simulated_s: f64,
}

impl Session {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let rig = Rig::new(&cfg.seeded_rig(), cfg.threads).context("building the reservoir")?;
        Ok(Self {
            rig,
            trace: Vec::new(),
            simulated_s: 0.0,
        })
    }

    fn dt(&self) -> f64 {
        self.rig.dt()
    }

    fn append(&mut self, rows: Vec<TraceRow>) {
        let skip = usize::from(!self.trace.is_empty());
        self.trace.extend(rows.into_iter().skip(skip));
        self.simulated_s = self.trace.len().saturating_sub(1) as f64 * self.dt() * 1e-3;
    }

    fn train(&mut self, plan: &Plan, gain_na: f64, schedule: &MixSchedule) -> Result<(RlsLearner, Option<String>)> {
        let targets = plan.targets(self.dt(), 0)?;
        let out = train_gait(&mut self.rig, &targets, schedule, &plan.control(gain_na))?;
        self.append(out.trace);
        Ok((out.learner, out.error.map(|e| format!("training failed: {e}"))))
    }

    fn drive(
        &mut self,
        learner: &mut RlsLearner,
        plan: &Plan,
        gain_na: f64,
        schedule: &MixSchedule,
        disturbances: &[TimedDisturbance],
        margin: usize,
    ) -> Result<Driven> {
        let dt = self.dt();
        let n = ticks(plan.duration_s, dt);
        let full = plan.targets(dt, margin)?;
        let targets = slice(&full, margin, n + 1);
        let out = run_episode(
            &mut self.rig,
            learner,
            &Episode {
                targets: &targets,
                schedule,
                control: &plan.control(gain_na),
                disturbances,
                learn: false,
                schedule_offset_s: 0.0,
            },
        );
        let readouts: Vec<Frame> = out.trace.iter().skip(1).map(|r| r.readout).collect();
        let reference: Vec<Frame> = (1..full.len()).map(|k| full.at(k)).collect();
        self.append(out.trace);
        Ok(Driven {
            readouts,
            reference,
            margin,
            error: out.error.map(|e| format!("evaluation failed: {e}")),
        })
    }

    /// Trains, or loads weights and drives the first evaluation segment open
    /// loop for `warmup_s`.
    fn prepare(
        &mut self,
        start: Start,
        train_plan: &Plan,
        warmup: &Plan,
        gain_na: f64,
        schedule: &MixSchedule,
    ) -> Result<(RlsLearner, Option<String>)> {
        match start {
            Start::Train => self.train(train_plan, gain_na, schedule),
            Start::Weights(w) => {
                let mut learner = w.learner()?;
                if learner.n_inputs() != self.rig.n_populations() {
                    bail!(
                        "weights expect {} populations but the reservoir has {}",
                        learner.n_inputs(),
                        self.rig.n_populations()
                    );
                }
                if warmup.duration_s <= 0.0 {
                    return Ok((learner, None));
                }
                let d = self.drive(&mut learner, warmup, gain_na, &open_loop_schedule(), &[], 0)?;
                Ok((learner, d.error))
            }
        }
    }
}

/// Kind-specific results that go into the report.
#[derive(Default)]
struct Findings {
    error: Option<String>,
    nrmse: Option<[f64; 4]>,
    frequencies: Vec<FrequencyRow>,
    checks: Vec<Check>,
    details: serde_json::Value,
}

fn finish(
    cfg: ExperimentConfig,
    session: Option<Session>,
    learner: Option<&RlsLearner>,
    f: Findings,
    started: Instant,
    extra_simulated_s: f64,
) -> Result<RunOutput> {
    let (trace, simulated_s) = match session {
        Some(s) => (s.trace, s.simulated_s),
        None => (Vec::new(), 0.0),
    };
    let report = Report {
        kind: cfg.kind,
        scale: cfg.scale,
        status: if f.error.is_some() {
            Status::Failed
        } else {
            Status::Completed
        },
        error: f.error,
        config_hash: cfg.hash()?,
        seeds: cfg.seed_manifest(),
        populations: cfg.rig.reservoir.n_populations,
        neurons_per_population: cfg.rig.reservoir.population.n_neurons,
        nrmse: f.nrmse.map(ReadoutNrmse::from),
        frequencies: f.frequencies,
        checks: f.checks,
        details: f.details,
        wall_clock_s: started.elapsed().as_secs_f64(),
        simulated_s: simulated_s + extra_simulated_s,
    };
    let weights = learner.map(|l| l.to_file(&cfg.schedule));
    Ok(RunOutput {
        config: cfg,
        report,
        trace,
        weights,
        search: None,
    })
}

fn nrmse_checks(nrmse: &[f64; 4], limit: f64) -> Vec<Check> {
    ["fl", "fr", "hl", "hr"]
        .iter()
        .zip(nrmse)
        .map(|(leg, &v)| Check::new(format!("nrmse_{leg}"), v, Comparison::Below, limit))
        .collect()
}

fn gait_generation(cfg: ExperimentConfig, start: Start) -> Result<RunOutput> {
    let started = Instant::now();
    let s = cfg.gait_generation.clone();
    let mut session = Session::new(&cfg)?;
    let dt = session.dt();
    let dt_s = dt * 1e-3;
    let train_plan = Plan::single(s.gait, 0.0, cfg.schedule.total_s());
    let warmup = Plan::single(s.gait, 0.0, s.warmup_s);
    let (mut learner, error) = session.prepare(start, &train_plan, &warmup, 0.0, &cfg.schedule)?;
    if error.is_some() {
        let f = Findings {
            error,
            ..Findings::default()
        };
        return finish(cfg, Some(session), Some(&learner), f, started, 0.0);
    }

    let period = period_samples(s.gait.frequency_hz, dt);
    let disturbances: Vec<TimedDisturbance> = s.disturbance.into_iter().collect();
    let d = session.drive(
        &mut learner,
        &Plan::single(s.gait, 0.0, s.eval_s),
        0.0,
        &closed_loop_schedule(),
        &disturbances,
        period,
    )?;
    let mut f = Findings {
        error: d.error,
        ..Findings::default()
    };
    let n = d.readouts.len();
    let (pre_end, release) = match s.disturbance {
        None => (n, None),
        Some(td) => {
            let at = ticks(td.at_s, dt).min(n);
            let hold = match td.kind {
                Disturbance::FreezeThenRelease { duration_ms } => (duration_ms / dt).round() as usize,
                Disturbance::DisplacePose { .. } => 0,
            };
            (at, Some(at + hold))
        }
    };
    let pre = &d.readouts[..pre_end];
    let mut acc = PhaseAlignedError::new();
    acc.add(pre, &d.reference, d.margin, period);
    f.nrmse = acc.nrmse();
    if let Some(nrmse) = &f.nrmse {
        f.checks.extend(nrmse_checks(nrmse, s.nrmse_limit));
    }

    let freq = dominant_frequency(&column(pre, 0), dt_s);
    let row = FrequencyRow::new("closed-loop", 0.0, pre_end as f64 * dt_s, 0.0, s.gait.frequency_hz, freq);
    f.checks.push(Check::new(
        "frequency_error",
        row.relative_error.unwrap_or(f64::INFINITY),
        Comparison::AtMost,
        s.frequency_tolerance,
    ));
    f.frequencies.push(row);

    let per = periodicity(pre);
    f.checks.push(Check::new(
        "cycle_correlation_min",
        per.min_correlation,
        Comparison::Above,
        s.cycle_correlation_limit,
    ));
    let mut details = json!({
        "closed_loop_s": pre_end as f64 * dt_s,
        "periodicity": per,
    });

    if is_bounding(&s.gait) {
        let (front, hind) = pair_correlations(pre);
        f.checks.push(Check::new("front_pair_correlation", front, Comparison::Above, s.pair_correlation_limit));
        f.checks.push(Check::new("hind_pair_correlation", hind, Comparison::Above, s.pair_correlation_limit));
    }

    if let Some(release) = release.filter(|&r| r < n) {
        let rec = recovery_samples(&d.readouts, release, s.cycle_correlation_limit, 3);
        let recovery_s = rec.map_or(f64::INFINITY, |r| r * dt_s);
        f.checks.push(Check::new("recovery_s", recovery_s, Comparison::AtMost, s.recovery_limit_s));
        if let Some(r) = rec {
            let from = release + r as usize;
            let after = &d.readouts[from..];
            let fr = dominant_frequency(&column(after, 0), dt_s);
            f.frequencies.push(FrequencyRow::new(
                "after-recovery",
                from as f64 * dt_s,
                n as f64 * dt_s,
                0.0,
                s.gait.frequency_hz,
                fr,
            ));
            details["periodicity_after_recovery"] = json!(periodicity(after));
        }
        details["release_s"] = json!(release as f64 * dt_s);
        details["recovery_s"] = json!(rec.map(|r| r * dt_s));
    }
    f.details = details;
    finish(cfg, Some(session), Some(&learner), f, started, 0.0)
}

fn speed_control(cfg: ExperimentConfig, start: Start) -> Result<RunOutput> {
    let started = Instant::now();
    let s = cfg.speed_control.clone();
    let mut session = Session::new(&cfg)?;
    let dt = session.dt();
    let dt_s = dt * 1e-3;
    let choices: Vec<(GaitDefinition, f64)> = s
        .frequencies_hz
        .iter()
        .zip(&s.levels)
        .map(|(&hz, &level)| {
            let mut g = s.gait;
            g.frequency_hz = hz;
            (g, level)
        })
        .collect();
    let train_plan = Plan::cycling(&choices, s.block_s, cfg.schedule.total_s());
    let eval_plan = Plan::sequence(&choices, &s.eval_order, s.hold_s);
    let warmup = Plan::single(eval_plan.segments[0].gait, eval_plan.segments[0].level, s.warmup_s);
    let (mut learner, error) = session.prepare(start, &train_plan, &warmup, s.control_gain_na, &cfg.schedule)?;
    if error.is_some() {
        let f = Findings {
            error,
            ..Findings::default()
        };
        return finish(cfg, Some(session), Some(&learner), f, started, 0.0);
    }

    let margin = s
        .frequencies_hz
        .iter()
        .map(|&hz| period_samples(hz, dt))
        .max()
        .unwrap_or(1000);
    let d = session.drive(&mut learner, &eval_plan, s.control_gain_na, &closed_loop_schedule(), &[], margin)?;
    let mut f = Findings {
        error: d.error,
        ..Findings::default()
    };
    let n = d.readouts.len();
    let mut acc = PhaseAlignedError::new();
    let mut measured: Vec<(f64, Option<f64>)> = Vec::new();
    let mut halves = Vec::new();
    for (i, &c) in s.eval_order.iter().enumerate() {
        let seg_start = i as f64 * s.hold_s;
        let lo = ticks(seg_start + s.settle_s, dt).min(n);
        let hi = ticks(seg_start + s.hold_s, dt).min(n);
        let part = &d.readouts[lo..hi];
        let hz = s.frequencies_hz[c];
        acc.add(part, &d.reference[lo..], d.margin, period_samples(hz, dt));
        let fl = column(part, 0);
        let m = dominant_frequency(&fl, dt_s);
        let mid = fl.len() / 2;
        halves.push(json!([dominant_frequency(&fl[..mid], dt_s), dominant_frequency(&fl[mid..], dt_s)]));
        f.frequencies.push(FrequencyRow::new(
            format!("segment-{}", i + 1),
            lo as f64 * dt_s,
            hi as f64 * dt_s,
            s.levels[c],
            hz,
            m,
        ));
        measured.push((s.levels[c], m));
    }
    f.nrmse = acc.nrmse();
    let worst = f
        .frequencies
        .iter()
        .map(|r| r.relative_error.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    f.checks.push(Check::new("frequency_error_max", worst, Comparison::AtMost, s.frequency_tolerance));
    let mut monotone = measured.iter().all(|m| m.1.is_some());
    for a in &measured {
        for b in &measured {
            if let (Some(fa), Some(fb)) = (a.1, b.1) {
                if a.0 < b.0 && fa >= fb {
                    monotone = false;
                }
            }
        }
    }
    f.checks.push(Check::flag("frequency_monotone_in_level", monotone));
    let mut worst_drift: f64 = 0.0;
    for &level in &s.levels {
        let same: Vec<f64> = measured
            .iter()
            .filter(|m| m.0 == level)
            .map(|m| m.1.unwrap_or(f64::NAN))
            .collect();
        if same.len() >= 2 {
            let hi = same.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = same.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = (hi - lo) / (0.5 * (hi + lo));
            worst_drift = worst_drift.max(if spread.is_nan() { f64::INFINITY } else { spread });
        }
    }
    f.checks.push(Check::new("revisit_drift_max", worst_drift, Comparison::AtMost, s.drift_tolerance));
    f.details = json!({ "half_segment_frequencies": halves });
    finish(cfg, Some(session), Some(&learner), f, started, 0.0)
}

fn gait_transition(cfg: ExperimentConfig, start: Start) -> Result<RunOutput> {
    let started = Instant::now();
    let s = cfg.gait_transition.clone();
    let mut session = Session::new(&cfg)?;
    let dt = session.dt();
    let dt_s = dt * 1e-3;
    let choices: Vec<(GaitDefinition, f64)> = s.gaits.iter().copied().zip(s.levels.iter().copied()).collect();
    let train_plan = Plan::cycling(&choices, s.block_s, cfg.schedule.total_s());
    let eval_plan = Plan::sequence(&choices, &s.eval_order, s.hold_s);
    let warmup = Plan::single(eval_plan.segments[0].gait, eval_plan.segments[0].level, s.warmup_s);
    let (mut learner, error) = session.prepare(start, &train_plan, &warmup, s.control_gain_na, &cfg.schedule)?;
    if error.is_some() {
        let f = Findings {
            error,
            ..Findings::default()
        };
        return finish(cfg, Some(session), Some(&learner), f, started, 0.0);
    }

    let periods: Vec<usize> = s.gaits.iter().map(|g| period_samples(g.frequency_hz, dt)).collect();
    let margin = *periods.iter().max().unwrap_or(&1000);
    let d = session.drive(&mut learner, &eval_plan, s.control_gain_na, &closed_loop_schedule(), &[], margin)?;
    let mut f = Findings {
        error: d.error,
        ..Findings::default()
    };
    let templates = s
        .gaits
        .iter()
        .map(|g| Template::from_gait(g, dt))
        .collect::<popforce_core::Result<Vec<_>>>()?;
    let window = ((s.window_cycles * margin as f64).round() as usize).max(2);
    let step = (periods.iter().min().copied().unwrap_or(2) / 2).max(1);
    let n = d.readouts.len();
    let mut acc = PhaseAlignedError::new();
    let mut worst_flip: f64 = 0.0;
    let mut all_selected = true;
    let mut segments = Vec::new();
    for (i, &c) in s.eval_order.iter().enumerate() {
        let seg_lo = ticks(i as f64 * s.hold_s, dt).min(n);
        let seg_hi = ticks((i + 1) as f64 * s.hold_s, dt).min(n);
        let mut timeline = String::new();
        let mut last_wrong_end = None;
        let mut windows = Vec::new();
        let mut k = seg_lo;
        while k + window <= seg_hi {
            let (cls, scores) = classify(&d.readouts[k..k + window], &templates);
            timeline.push(char::from_digit(cls as u32 % 10, 10).unwrap_or('?'));
            if cls != c {
                last_wrong_end = Some(k + window);
            }
            windows.push((k, cls, scores));
            k += step;
        }
        // the flip is complete by the end of the first window of the final
        // all-correct run, so latency is bounded by at least one window
        let settled_from = last_wrong_end.unwrap_or(seg_lo);
        let first_correct = windows.iter().find(|w| w.0 >= settled_from).map(|w| w.0);
        let selected = first_correct.is_some();
        let flip_cycles = first_correct.map_or(f64::INFINITY, |k| {
            (k + window - seg_lo) as f64 * dt_s * s.gaits[c].frequency_hz
        });
        all_selected &= selected;
        worst_flip = worst_flip.max(flip_cycles);

        let measure_lo = (seg_lo + (s.max_flip_cycles * periods[c] as f64).round() as usize).min(seg_hi);
        let part = &d.readouts[measure_lo..seg_hi];
        if part.len() >= periods[c] {
            acc.add(part, &d.reference[measure_lo..], d.margin, periods[c]);
        }
        f.frequencies.push(FrequencyRow::new(
            format!("segment-{}", i + 1),
            measure_lo as f64 * dt_s,
            seg_hi as f64 * dt_s,
            s.levels[c],
            s.gaits[c].frequency_hz,
            dominant_frequency(&column(part, 0), dt_s),
        ));
        let mean_scores: Vec<f64> = (0..templates.len())
            .map(|t| {
                let v: Vec<f64> = windows.iter().filter(|w| w.0 >= settled_from).map(|w| w.2[t]).collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect();
        segments.push(json!({
            "commanded": c,
            "timeline": timeline,
            "flip_cycles": flip_cycles,
            "mean_scores_after_flip": mean_scores,
        }));
    }
    f.nrmse = acc.nrmse();
    f.checks.push(Check::flag("commanded_gait_selected", all_selected));
    f.checks.push(Check::new("flip_cycles_max", worst_flip, Comparison::AtMost, s.max_flip_cycles));
    f.details = json!({
        "window_samples": window,
        "step_samples": step,
        "segments": segments,
    });
    finish(cfg, Some(session), Some(&learner), f, started, 0.0)
}

/// Distance from the origin after driving the body open loop with the gait.
pub fn rollout_distance(gait: &GaitDefinition, body: &popforce_core::body::BodyParams, duration_s: f64, dt_ms: f64) -> Result<f64> {
    let targets = target_trajectories(gait, duration_s, dt_ms)?;
    let mut b = Body::new(*body)?;
    for k in 1..targets.len() {
        b.step(&targets.at(k), dt_ms)?;
    }
    Ok(b.state().distance_from_origin)
}

fn rollout_trace(gait: &GaitDefinition, body: &popforce_core::body::BodyParams, duration_s: f64, dt_ms: f64) -> Result<Vec<TraceRow>> {
    let targets = target_trajectories(gait, duration_s, dt_ms)?;
    let mut b = Body::new(*body)?;
    let mut rows = Vec::with_capacity(targets.len());
    for k in 0..targets.len() {
        let target = targets.at(k);
        if k > 0 {
            b.step(&target, dt_ms)?;
        }
        let st = b.state();
        rows.push(TraceRow {
            t: k as f64 * dt_ms * 1e-3,
            target,
            readout: [f64::NAN; 4],
            sensor_raw: st.knee,
            sensor_filtered: st.knee,
            control: 0.0,
            beta: 0.0,
            x: st.x,
            y: st.y,
            heading: st.heading,
            distance: st.distance_from_origin,
            motor: if k > 0 { target } else { st.hip },
        });
    }
    Ok(rows)
}

fn gait_search(cfg: ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let s = cfg.gait_search.clone();
    let body = cfg.rig.body;
    let space = s.space.space();
    let mut cmaes = s.cmaes.clone();
    cmaes.seed = cfg.seed_manifest().search;
    let evaluator = |g: &GaitDefinition, _seed: u64| rollout_distance(g, &body, s.rollout_s, s.dt_ms).map_err(|e| e.to_string());
    let result = optimize_gait(&space, evaluator, &cmaes, cfg.threads)?;

    let mut f = Findings::default();
    let first = result.history.first().map_or(f64::NEG_INFINITY, |h| h.best);
    f.checks.push(Check::new(
        "improvement_over_first_generation",
        result.best_fitness - first,
        Comparison::Above,
        0.0,
    ));
    let best = result.best_gait;
    let dt = s.dt_ms;
    let templates = [
        Template::from_gait(&GaitDefinition::walking(), dt)?,
        Template::from_gait(&GaitDefinition::bounding(), dt)?,
    ];
    let long = target_trajectories(&best, 20.0, dt)?;
    let win = 2 * period_samples(best.frequency_hz, dt);
    let frames: Vec<Frame> = (long.len() - win..long.len()).map(|k| long.at(k)).collect();
    let (cls, scores) = classify(&frames, &templates);
    let expected = match s.space {
        SearchSpaceKind::Walking => 0,
        SearchSpaceKind::Bounding => 1,
    };
    f.checks.push(Check::flag(
        match s.space {
            SearchSpaceKind::Walking => "classified_as_walking",
            SearchSpaceKind::Bounding => "classified_as_bounding",
        },
        cls == expected,
    ));
    let trace = rollout_trace(&best, &body, s.rollout_s, dt)?;
    let fl: Vec<f64> = trace.iter().map(|r| r.target[0]).collect();
    f.frequencies.push(FrequencyRow::new(
        "best-gait-targets",
        0.0,
        s.rollout_s,
        0.0,
        best.frequency_hz,
        dominant_frequency(&fl, dt * 1e-3),
    ));
    f.details = json!({
        "best_fitness": result.best_fitness,
        "first_generation_best": first,
        "generations": result.history.len(),
        "template_scores": { "walking": scores[0], "bounding": scores[1] },
        "best_gait": best,
    });
    let evaluations = result.history.len() * cmaes.population;
    let simulated = evaluations as f64 * s.rollout_s + s.rollout_s;
    let mut out = finish(cfg, None, None, f, started, simulated)?;
    out.trace = trace;
    out.search = Some(result);
    Ok(out)
}
