#![allow(dead_code)]

use popforce_harness::config::{parse_value, ConfigSource, ExperimentConfig, ExperimentKind, Overrides, Scale};
use popforce_harness::output::write_trace_csv;
use popforce_core::closed_loop::TraceRow;
use sha2::{Digest, Sha256};

/// A few-second configuration of each kind on a small reservoir.
pub fn tiny(kind: ExperimentKind) -> ExperimentConfig {
    let common: &[(&str, &str)] = &[
        ("rig.reservoir.n_populations", "12"),
        ("rig.reservoir.population.n_neurons", "10"),
        ("schedule.open_s", "1.0"),
        ("schedule.mix_s", "1.0"),
        ("schedule.closed_s", "1.0"),
    ];
    let specific: &[(&str, &str)] = match kind {
        ExperimentKind::GaitGeneration => &[
            ("gait_generation.eval_s", "4.0"),
            ("gait_generation.disturbance.at_s", "2.0"),
            ("gait_generation.disturbance.kind.duration_ms", "500.0"),
        ],
        ExperimentKind::SpeedControl => &[
            ("speed_control.block_s", "1.0"),
            ("speed_control.hold_s", "1.5"),
            ("speed_control.settle_s", "0.5"),
            ("speed_control.eval_order", "[0, 2]"),
        ],
        ExperimentKind::GaitTransition => &[
            ("gait_transition.block_s", "1.0"),
            ("gait_transition.hold_s", "2.0"),
            ("gait_transition.eval_order", "[0, 1]"),
        ],
        ExperimentKind::GaitSearch => &[
            ("gait_search.rollout_s", "1.0"),
            ("gait_search.cmaes.population", "6"),
            ("gait_search.cmaes.max_generations", "3"),
        ],
    };
    let ov = Overrides {
        scale: Some(Scale::Ci),
        seed: Some(11),
        kind: Some(kind),
        params: common
            .iter()
            .chain(specific)
            .map(|(p, v)| (p.to_string(), parse_value(v)))
            .collect(),
    };
    ConfigSource::parse("version = 1").unwrap().resolve(&ov).unwrap()
}

pub fn csv_bytes(rows: &[TraceRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, rows).unwrap();
    buf
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
