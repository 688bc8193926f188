//! Run directory layout and CSV writers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use popforce_core::closed_loop::TraceRow;

use crate::experiments::RunOutput;

pub const CONFIG_FILE: &str = "config.toml";
pub const SEEDS_FILE: &str = "seeds.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "report.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const TARGETS_FILE: &str = "targets.csv";
pub const BODY_FILE: &str = "body_state.csv";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const SEARCH_LOG_FILE: &str = "search_log.csv";
pub const BEST_GAIT_FILE: &str = "best_gait.toml";

/// Every n-th trace row goes into the plot file.
pub const PLOT_STRIDE: usize = 10;

pub const PLOT_HEADER: [&str; 11] = [
    "t", "target_fl", "target_fr", "target_hl", "target_hr", "readout_fl", "readout_fr", "readout_hl",
    "readout_hr", "control", "beta",
];
pub const TARGETS_HEADER: [&str; 5] = ["t", "target_fl", "target_fr", "target_hl", "target_hr"];
pub const BODY_HEADER: [&str; 12] = [
    "t", "motor_fl", "motor_fr", "motor_hl", "motor_hr", "knee_fl", "knee_fr", "knee_hl", "knee_hr", "x", "y",
    "distance",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_rows<W: Write, const N: usize>(
    w: W,
    header: &[&str; N],
    rows: impl Iterator<Item = [f64; N]>,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header)?;
    for r in rows {
        csv.write_record(r.iter().map(|v| v.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

/// Full trace, one row per tick in `TraceRow::HEADER` order.
pub fn write_trace_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    write_rows(w, &TraceRow::HEADER, rows.iter().map(TraceRow::values))
}

/// Targets against readouts plus control and mixing, down-sampled.
pub fn write_plot_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    write_rows(
        w,
        &PLOT_HEADER,
        rows.iter().step_by(PLOT_STRIDE).map(|r| {
            [
                r.t, r.target[0], r.target[1], r.target[2], r.target[3], r.readout[0], r.readout[1], r.readout[2],
                r.readout[3], r.control, r.beta,
            ]
        }),
    )
}

pub fn write_targets_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    write_rows(
        w,
        &TARGETS_HEADER,
        rows.iter().map(|r| [r.t, r.target[0], r.target[1], r.target[2], r.target[3]]),
    )
}

pub fn write_body_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    write_rows(
        w,
        &BODY_HEADER,
        rows.iter().map(|r| {
            [
                r.t, r.motor[0], r.motor[1], r.motor[2], r.motor[3], r.sensor_raw[0], r.sensor_raw[1], r.sensor_raw[2],
                r.sensor_raw[3], r.x, r.y, r.distance,
            ]
        }),
    )
}

fn row_from_values(v: &[f64; 27]) -> TraceRow {
    let four = |i: usize| [v[i], v[i + 1], v[i + 2], v[i + 3]];
    TraceRow {
        t: v[0],
        target: four(1),
        readout: four(5),
        sensor_raw: four(9),
        sensor_filtered: four(13),
        control: v[17],
        beta: v[18],
        x: v[19],
        y: v[20],
        heading: v[21],
        distance: v[22],
        motor: four(23),
    }
}

/// Reads a trace written by [`write_trace_csv`]; values round-trip exactly.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != TraceRow::HEADER {
        bail!("{}: unexpected columns", path.display());
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 27];
        for (slot, field) in v.iter_mut().zip(rec.iter()) {
            *slot = field
                .parse()
                .map_err(|e| anyhow!("{} row {}: {e}", path.display(), i + 1))?;
        }
        rows.push(row_from_values(&v));
    }
    Ok(rows)
}

/// Writes everything a run produced into `dir` and returns the file paths.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    let mut put = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w)?;
        w.flush().with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    put(CONFIG_FILE, &|w| Ok(w.write_all(out.config.to_toml()?.as_bytes())?))?;
    put(SEEDS_FILE, &|w| Ok(serde_json::to_writer_pretty(w, &out.config.seed_manifest())?))?;
    put(REPORT_FILE, &|w| Ok(serde_json::to_writer_pretty(w, &out.report)?))?;
    put(SUMMARY_FILE, &|w| Ok(writeln!(w, "{}", out.report.summary())?))?;
    put(TRACE_FILE, &|w| write_trace_csv(w, &out.trace))?;
    put(PLOT_FILE, &|w| write_plot_csv(w, &out.trace))?;
    if let Some(weights) = &out.weights {
        put(WEIGHTS_FILE, &|w| Ok(weights.write(w)?))?;
    }
    if let Some(search) = &out.search {
        put(SEARCH_LOG_FILE, &|w| Ok(search.write_log_csv(w)?))?;
        put(BEST_GAIT_FILE, &|w| Ok(w.write_all(toml::to_string(&search.best_gait)?.as_bytes())?))?;
    }
    Ok(written)
}

/// Regenerates the plot, target and body-state CSVs from a run directory's trace.
pub fn export(dir: &Path) -> Result<Vec<PathBuf>> {
    for needed in [TRACE_FILE, CONFIG_FILE, SEEDS_FILE] {
        if !dir.join(needed).is_file() {
            bail!("{} has no {needed}", dir.display());
        }
    }
    let rows = read_trace_csv(&dir.join(TRACE_FILE))?;
    let mut written = Vec::new();
    type Writer = fn(&mut BufWriter<File>, &[TraceRow]) -> Result<()>;
    let writers: [(&str, Writer); 3] = [
        (PLOT_FILE, |w, r| write_plot_csv(w, r)),
        (TARGETS_FILE, |w, r| write_targets_csv(w, r)),
        (BODY_FILE, |w, r| write_body_csv(w, r)),
    ];
    for (name, f) in writers {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w, &rows)?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
