use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use popforce_core::force::WeightsFile;
use popforce_harness::config::{load, parse_value, ExperimentConfig, ExperimentKind, Overrides, Scale};
use popforce_harness::experiments::{run, RunOutput, Start};
use popforce_harness::output::{export, write_run};

/// Spiking-reservoir gait controller experiments.
#[derive(Parser, Debug)]
#[command(name = "popforce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; the per-stream seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Worker threads for network construction and candidate evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any config value, e.g. `--set rig.reservoir.n_populations=50`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train readouts and evaluate them closed loop.
    Train { config: PathBuf },
    /// Evaluate stored readout weights closed loop.
    Evaluate { weights: PathBuf, config: PathBuf },
    /// Search gait parameters with CMA-ES.
    Search { config: PathBuf },
    /// Repeat a run once per value of one config parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Regenerate plot, target and body-state CSVs from a run directory.
    Export { run_dir: PathBuf },
}

impl Cli {
    fn overrides(&self) -> Result<Overrides> {
        let mut params = Vec::new();
        if let Some(t) = self.threads {
            params.push(("threads".to_string(), toml::Value::Integer(t as i64)));
        }
        for s in &self.set {
            let (path, value) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects PATH=VALUE, got `{s}`"))?;
            params.push((path.trim().to_string(), parse_value(value.trim())));
        }
        Ok(Overrides {
            scale: self.scale,
            seed: self.seed,
            kind: None,
            params,
        })
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
    }
}

fn finish(dir: &Path, out: &RunOutput) -> Result<bool> {
    let files = write_run(dir, out)?;
    println!("{}", out.report.summary());
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(out.report.passed())
}

fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Train { config } => {
            let cfg = load(config, &cli.overrides()?)?;
            if cfg.kind == ExperimentKind::GaitSearch {
                return Err(anyhow!("gait-search configs run with `search`"));
            }
            info!("training {} at {:?} scale", cfg.kind.name(), cfg.scale);
            let out = run(&cfg, Start::Train)?;
            finish(&cli.out_dir(&cfg), &out)
        }
        Command::Evaluate { weights, config } => {
            let cfg = load(config, &cli.overrides()?)?;
            let f = File::open(weights).with_context(|| format!("cannot open {}", weights.display()))?;
            let w = WeightsFile::read(f).with_context(|| format!("cannot read {}", weights.display()))?;
            let out = run(&cfg, Start::Weights(w))?;
            finish(&cli.out_dir(&cfg), &out)
        }
        Command::Search { config } => {
            let mut ov = cli.overrides()?;
            ov.kind = Some(ExperimentKind::GaitSearch);
            let cfg = load(config, &ov)?;
            let out = run(&cfg, Start::Train)?;
            finish(&cli.out_dir(&cfg), &out)
        }
        Command::Sweep { config, param, values } => sweep(cli, config, param, values),
        Command::Export { run_dir } => {
            for p in export(run_dir)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn sweep(cli: &Cli, config: &Path, param: &str, values: &[String]) -> Result<bool> {
    let base = load(config, &cli.overrides()?)?;
    let root = cli.out_dir(&base);
    std::fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
    let sweep_path = root.join("sweep.csv");
    let mut table = csv::Writer::from_path(&sweep_path).with_context(|| format!("cannot write {}", sweep_path.display()))?;
    table.write_record(["value", "status", "passed", "nrmse_max", "failed_checks", "run_dir"])?;
    let mut all = true;
    for (i, value) in values.iter().enumerate() {
        let mut ov = cli.overrides()?;
        ov.params.push((param.to_string(), parse_value(value)));
        let cfg = load(config, &ov)?;
        let dir = root.join(format!("{:02}-{}", i, value.replace(['/', ' '], "_")));
        info!("sweep {param} = {value}");
        let out = run(&cfg, Start::Train)?;
        let passed = finish(&dir, &out)?;
        all &= passed;
        let failed: Vec<&str> = out.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        table.write_record([
            value.clone(),
            format!("{:?}", out.report.status).to_lowercase(),
            passed.to_string(),
            out.report.nrmse.map_or(String::new(), |n| n.max().to_string()),
            failed.join(";"),
            dir.display().to_string(),
        ])?;
        table.flush()?;
    }
    println!("wrote {}", sweep_path.display());
    Ok(all)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(1)
        }
    }
}
