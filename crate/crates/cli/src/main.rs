mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

use crate::config::{apply_overrides, decode, read_json, set_top, PresetConfig, RunConfig, SweepGrid};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or parameters; exit status 1.
    #[error("{0}")]
    Config(String),
    /// Reading or writing a file failed; exit status 2.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hiam", version, about = "Interacting-agent asset market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    histories: Option<u64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    sample_dt: Option<f64>,
    /// Override a configuration entry, e.g. `--set kappa=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One stochastic history: trajectory.csv + manifest.json.
    Simulate(Common),
    /// Mean and standard error over independent histories: ensemble.csv.
    Ensemble(Common),
    /// Mean-field prediction sampled on the output grid: analytic.csv.
    Analytic(Common),
    /// Regime, extremum pattern and validity horizon as JSON on stdout.
    Classify(Common),
    /// Classify every point of a parameter grid: sweep.csv.
    Sweep(Common),
    /// Run a built-in preset (1, 2 or 3) and its prediction overlay.
    ReproduceFig {
        id: String,
        #[command(flatten)]
        common: Common,
    },
}

fn run_config(common: &Common) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut doc = read_json(path)?;
    apply_overrides(&mut doc, &common.overrides)?;
    if let Some(seed) = common.seed {
        set_top(&mut doc, "seed", seed.into());
    }
    if let Some(h) = common.histories {
        set_top(&mut doc, "histories", h.into());
    }
    if let Some(t) = common.t_max {
        set_top(&mut doc, "t_max", t.into());
    }
    if let Some(dt) = common.sample_dt {
        set_top(&mut doc, "sample_dt", dt.into());
    }
    decode(doc, &path.display().to_string())
}

fn preset_config(id: &str, common: &Common) -> Result<PresetConfig, CliError> {
    let mut p = config::preset(id)?;
    if common.config.is_some() {
        return Err(CliError::Config("reproduce-fig takes no --config".into()));
    }
    let mut doc = serde_json::to_value(Overridable::from(&p)).expect("preset serializes");
    apply_overrides(&mut doc, &common.overrides)?;
    let o: Overridable = decode(doc, "override")?;
    p.params = o.params;
    p.seed = common.seed.unwrap_or(o.seed);
    p.histories = common.histories.unwrap_or(o.histories);
    p.t_max = common.t_max.unwrap_or(o.t_max);
    p.sample_dt = common.sample_dt.unwrap_or(o.sample_dt);
    Ok(p)
}

/// The preset fields that `--set` may touch.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Overridable {
    params: hiam_core::model::ParamsDocument,
    seed: u64,
    histories: u64,
    t_max: f64,
    sample_dt: f64,
}

impl From<&PresetConfig> for Overridable {
    fn from(p: &PresetConfig) -> Self {
        Overridable {
            params: p.params,
            seed: p.seed,
            histories: p.histories,
            t_max: p.t_max,
            sample_dt: p.sample_dt,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HIAM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("HIAM_THREADS must be a positive integer (got {raw:?})")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn print_outputs(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => {
            let m = commands::simulate_cmd(&run_config(&c)?, &c.out)?;
            print_outputs(&m.outputs);
        }
        Command::Ensemble(c) => {
            let m = commands::ensemble_cmd(&run_config(&c)?, &c.out)?;
            print_outputs(&m.outputs);
        }
        Command::Analytic(c) => {
            let m = commands::analytic_cmd(&run_config(&c)?, &c.out)?;
            print_outputs(&m.outputs);
        }
        Command::Classify(c) => {
            println!("{}", commands::classify_cmd(run_config(&c)?.params)?);
        }
        Command::Sweep(c) => {
            let path = c
                .config
                .as_ref()
                .ok_or_else(|| CliError::Config("--config (sweep grid) is required".into()))?;
            let mut doc: Value = read_json(path)?;
            apply_overrides(&mut doc, &c.overrides)?;
            let grid: SweepGrid = decode(doc, &path.display().to_string())?;
            let out = commands::sweep_cmd(&grid, &c.out)?;
            print_outputs(&[out]);
        }
        Command::ReproduceFig { id, common } => {
            let preset = preset_config(&id, &common)?;
            eprintln!("{}", preset.note);
            let m = commands::reproduce_cmd(&preset, &common.out)?;
            print_outputs(&m.outputs);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
