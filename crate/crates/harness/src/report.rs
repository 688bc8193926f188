//! Structured run report.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentKind, Scale, SeedManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Completed,
    /// Training or evaluation aborted; the trace up to that point is kept.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutNrmse {
    pub fl: f64,
    pub fr: f64,
    pub hl: f64,
    pub hr: f64,
}

impl From<[f64; 4]> for ReadoutNrmse {
    fn from(v: [f64; 4]) -> Self {
        Self {
            fl: v[0],
            fr: v[1],
            hl: v[2],
            hr: v[3],
        }
    }
}

impl ReadoutNrmse {
    pub fn values(&self) -> [f64; 4] {
        [self.fl, self.fr, self.hl, self.hr]
    }

    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Measured front-left readout frequency over one stretch of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub segment: String,
    pub start_s: f64,
    pub end_s: f64,
    pub control_level: f64,
    pub target_hz: f64,
    pub measured_hz: Option<f64>,
    pub relative_error: Option<f64>,
}

impl FrequencyRow {
    pub fn new(segment: impl Into<String>, start_s: f64, end_s: f64, control_level: f64, target_hz: f64, measured_hz: Option<f64>) -> Self {
        Self {
            segment: segment.into(),
            start_s,
            end_s,
            control_level,
            target_hz,
            measured_hz,
            relative_error: measured_hz.map(|m| (m / target_hz - 1.0).abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Below,
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">")]
    Above,
}

/// One property the run is expected to satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, comparison: Comparison, limit: f64) -> Self {
        let passed = match comparison {
            Comparison::Below => value < limit,
            Comparison::AtMost => value <= limit,
            Comparison::Above => value > limit,
        };
        Self {
            name: name.into(),
            value,
            comparison,
            limit,
            passed,
        }
    }

    /// A yes/no property, recorded as 1 or 0.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Comparison::Above, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ExperimentKind,
    pub scale: Scale,
    pub status: Status,
    pub error: Option<String>,
    pub config_hash: String,
    pub seeds: SeedManifest,
    pub populations: usize,
    pub neurons_per_population: usize,
    /// Closed-loop readout error against the phase-aligned target.
    pub nrmse: Option<ReadoutNrmse>,
    pub frequencies: Vec<FrequencyRow>,
    pub checks: Vec<Check>,
    /// Kind-specific measurements.
    pub details: serde_json::Value,
    pub wall_clock_s: f64,
    pub simulated_s: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.status == Status::Completed && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Human-readable summary, one line per item.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} ({:?} scale, {} x {}): {:?}",
            self.kind.name(),
            self.scale,
            self.populations,
            self.neurons_per_population,
            self.status
        );
        if let Some(e) = &self.error {
            s += &format!("\n  error: {e}");
        }
        if let Some(n) = &self.nrmse {
            s += &format!(
                "\n  nrmse fl {:.3} fr {:.3} hl {:.3} hr {:.3}",
                n.fl, n.fr, n.hl, n.hr
            );
        }
        for f in &self.frequencies {
            let m = f.measured_hz.map_or("-".to_string(), |m| format!("{m:.3}"));
            s += &format!(
                "\n  {:<16} level {:>5.2}  target {:.3} Hz  measured {} Hz",
                f.segment, f.control_level, f.target_hz, m
            );
        }
        for c in &self.checks {
            let op = match c.comparison {
                Comparison::Below => "<",
                Comparison::AtMost => "<=",
                Comparison::Above => ">",
            };
            s += &format!(
                "\n  [{}] {} = {:.4} ({op} {})",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
        }
        s += &format!(
            "\n  simulated {:.1} s in {:.1} s wall clock",
            self.simulated_s, self.wall_clock_s
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_compare_as_labelled() {
        assert!(Check::new("a", 0.1, Comparison::Below, 0.2).passed);
        assert!(!Check::new("a", 0.2, Comparison::Below, 0.2).passed);
        assert!(Check::new("a", 0.2, Comparison::AtMost, 0.2).passed);
        assert!(Check::new("a", 0.95, Comparison::Above, 0.9).passed);
        assert!(!Check::new("a", f64::NAN, Comparison::Above, 0.9).passed);
        assert!(Check::flag("f", true).passed);
        assert!(!Check::flag("f", false).passed);
    }

    #[test]
    fn frequency_row_error_is_relative() {
        let r = FrequencyRow::new("x", 0.0, 1.0, 1.0, 2.0, Some(1.8));
        assert!((r.relative_error.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(FrequencyRow::new("x", 0.0, 1.0, 1.0, 2.0, None).relative_error, None);
    }
}
