mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::tiny;
use popforce_harness::config::{ExperimentConfig, ExperimentKind, Scale};
use popforce_harness::output::{read_trace_csv, REPORT_FILE, SEEDS_FILE, TRACE_FILE, WEIGHTS_FILE};

fn popforce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popforce"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, kind: ExperimentKind) -> PathBuf {
    let path = dir.join(format!("{}.toml", kind.name()));
    std::fs::write(&path, tiny(kind).to_toml().unwrap()).unwrap();
    path
}

fn assert_ran(out: &Output) {
    let code = out.status.code().unwrap();
    assert!(
        code == 0 || code == 2,
        "exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_evaluate_export_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), ExperimentKind::GaitGeneration);
    let run_dir = tmp.path().join("run");
    let out = popforce(&["train", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    assert_ran(&out);
    for f in [TRACE_FILE, REPORT_FILE, SEEDS_FILE, WEIGHTS_FILE, "config.toml", "plot.csv"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join(REPORT_FILE)).unwrap()).unwrap();
    for key in ["config_hash", "seeds", "nrmse", "frequencies", "wall_clock_s", "simulated_s"] {
        assert!(!report[key].is_null(), "report lacks {key}");
    }

    // the snapshot alone reproduces the trace
    let again = tmp.path().join("again");
    let snapshot = run_dir.join("config.toml");
    assert_ran(&popforce(&["train", snapshot.to_str().unwrap(), "--out", again.to_str().unwrap()]));
    assert_eq!(
        std::fs::read(run_dir.join(TRACE_FILE)).unwrap(),
        std::fs::read(again.join(TRACE_FILE)).unwrap()
    );

    let eval_dir = tmp.path().join("eval");
    let weights = run_dir.join(WEIGHTS_FILE);
    let out = popforce(&[
        "evaluate",
        weights.to_str().unwrap(),
        cfg.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_ran(&out);
    assert!(!read_trace_csv(&eval_dir.join(TRACE_FILE)).unwrap().is_empty());

    let out = popforce(&["export", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
    assert!(run_dir.join("targets.csv").is_file());
    assert!(run_dir.join("body_state.csv").is_file());
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), ExperimentKind::GaitSearch);
    let mut traces = Vec::new();
    for seed in ["3", "4"] {
        let dir = tmp.path().join(seed);
        assert_ran(&popforce(&["search", cfg.to_str().unwrap(), "--seed", seed, "--out", dir.to_str().unwrap()]));
        let seeds: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join(SEEDS_FILE)).unwrap()).unwrap();
        assert_eq!(seeds["master"].to_string(), seed);
        assert!(dir.join("search_log.csv").is_file());
        assert!(dir.join("best_gait.toml").is_file());
        traces.push(std::fs::read(dir.join(TRACE_FILE)).unwrap());
    }
    assert_ne!(traces[0], traces[1]);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), ExperimentKind::GaitGeneration);
    let out_dir = tmp.path().join("sweep");
    let out = popforce(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "rig.learning.alpha",
        "--values",
        "10",
        "100",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ran(&out);
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("10,"));
    assert!(lines[2].starts_with("100,"));
    let snap = std::fs::read_to_string(out_dir.join("01-100").join("config.toml")).unwrap();
    assert!(snap.contains("alpha = 100.0"), "{snap}");
}

#[test]
fn errors_exit_with_one_and_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nkind = \"gait-generation\"\nunknown_field = 3\n").unwrap();
    let out = popforce(&["train", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_field"));

    let out = popforce(&["train", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.toml"));

    let out = popforce(&["export", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

/// The files under configs/defaults document every default; set
/// UPDATE_GOLDEN=1 to regenerate them.
#[test]
fn documented_defaults_match_presets() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    if update {
        std::fs::create_dir_all(&root).unwrap();
    }
    for kind in [
        ExperimentKind::GaitGeneration,
        ExperimentKind::SpeedControl,
        ExperimentKind::GaitTransition,
        ExperimentKind::GaitSearch,
    ] {
        for scale in [Scale::Full, Scale::Ci] {
            let name = format!("{}-{}.toml", kind.name(), if scale == Scale::Ci { "ci" } else { "full" });
            let text = ExperimentConfig::preset(kind, scale).to_toml().unwrap();
            let path = root.join(&name);
            if update {
                std::fs::write(&path, &text).unwrap();
            } else {
                let stored = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {name}"));
                assert_eq!(stored, text, "{name} is stale");
            }
        }
    }
}

#[test]
fn shipped_configs_resolve() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            for scale in [Scale::Full, Scale::Ci] {
                let ov = popforce_harness::config::Overrides {
                    scale: Some(scale),
                    ..Default::default()
                };
                popforce_harness::config::load(&path, &ov).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            }
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
