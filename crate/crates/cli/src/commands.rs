//! Subcommand implementations. Each writes its data files under `out` and
//! returns the manifest describing them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hiam_core::analytic::{freeze_prediction, ClosedFormSolution};
use hiam_core::classifier::{classify_pattern, verdict_case_a_until, verdict_case_b_until, DEFAULT_LISTING_HORIZON};
use hiam_core::model::{
    derived_constants, validate, validate_for_simulation, FundamentalMode, ModeKind, ModelParams, ParamsDocument,
};
use hiam_core::network::{GraphSpec, PeerGraph};
use hiam_core::output::{fmt_f64, write_curve_csv, write_ensemble_csv, write_trajectory_csv};
use hiam_core::{run_ensemble, simulate, SimConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PresetConfig, RunConfig, SweepGrid};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub simulation: u64,
    pub graph: u64,
}

/// Field order is the serialization order, which keeps manifests stable.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub params: ParamsDocument,
    pub graphs: Vec<GraphSpec>,
    pub seeds: Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histories: Option<u64>,
    pub t_max: f64,
    pub sample_dt: f64,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &str, params: ParamsDocument, t_max: f64, sample_dt: f64) -> Self {
        RunManifest {
            command: command.to_string(),
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            note: None,
            params,
            graphs: Vec::new(),
            seeds: Seeds {
                simulation: 0,
                graph: 0,
            },
            histories: None,
            t_max,
            sample_dt,
            wall_time_s: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, out: &Path, started: Instant) -> Result<PathBuf, CliError> {
        self.wall_time_s = started.elapsed().as_secs_f64();
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn create(out: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let path = out.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn write_file(
    out: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(out, name)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn report_warnings(params: &ModelParams, mode: &FundamentalMode, for_simulation: bool) -> Result<(), CliError> {
    let report = if for_simulation {
        validate_for_simulation(params, mode)
    } else {
        validate(params, mode)
    };
    for w in report.into_result().map_err(|e| CliError::Config(e.to_string()))? {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn build_graph(spec: &GraphSpec, n: usize, seed: u64) -> Result<PeerGraph, CliError> {
    spec.build(n, seed)
        .map_err(|e| CliError::Config(format!("graph {spec}: {e}")))
}

fn graph_label(spec: &GraphSpec) -> String {
    match spec {
        GraphSpec::FullyConnected => "fully_connected".into(),
        GraphSpec::RandomRegular { nu } => format!("random_regular_nu{nu}"),
        GraphSpec::RandomDirected { nu } => format!("random_directed_nu{nu}"),
        GraphSpec::Ring { k } => format!("ring_k{k}"),
    }
}

fn sim_error(e: hiam_core::simulator::SimError) -> CliError {
    CliError::Config(e.to_string())
}

pub fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let (params, mode) = cfg.params.split();
    report_warnings(&params, &mode, true)?;
    let graph = build_graph(&cfg.graph, params.n_agents, cfg.graph_seed())?;
    let tr = simulate(
        &params,
        &mode,
        &graph,
        &SimConfig::new(cfg.t_max, cfg.sample_dt, cfg.seed),
    )
    .map_err(sim_error)?;
    if let Some(t) = tr.validity_exit {
        eprintln!("note: |P - P_f| left the validity band at t = {t}");
    }
    let mut m = RunManifest::new("simulate", cfg.params, cfg.t_max, cfg.sample_dt);
    m.note = cfg.note.clone();
    m.graphs = vec![cfg.graph];
    m.seeds = Seeds {
        simulation: cfg.seed,
        graph: cfg.graph_seed(),
    };
    m.outputs
        .push(write_file(out, "trajectory.csv", |w| write_trajectory_csv(w, &tr))?);
    m.write(out, started)?;
    Ok(m)
}

pub fn ensemble_cmd(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let (params, mode) = cfg.params.split();
    report_warnings(&params, &mode, true)?;
    let graph = build_graph(&cfg.graph, params.n_agents, cfg.graph_seed())?;
    let sim = SimConfig::new(cfg.t_max, cfg.sample_dt, cfg.seed);
    let stats = run_ensemble(&params, &mode, &graph, &sim, cfg.histories).map_err(sim_error)?;
    let mut m = RunManifest::new("ensemble", cfg.params, cfg.t_max, cfg.sample_dt);
    m.note = cfg.note.clone();
    m.graphs = vec![cfg.graph];
    m.seeds = Seeds {
        simulation: cfg.seed,
        graph: cfg.graph_seed(),
    };
    m.histories = Some(cfg.histories);
    m.outputs
        .push(write_file(out, "ensemble.csv", |w| write_ensemble_csv(w, &stats))?);
    m.write(out, started)?;
    Ok(m)
}

type Curve = Box<dyn Fn(f64) -> (f64, f64, f64)>;

/// Mean-field prediction `t -> (m, P, P_f)`: the closed form, or the freeze
/// path when the fundamental follows the price from outside the band.
fn prediction(params: &ModelParams, mode: &FundamentalMode) -> Result<Curve, CliError> {
    let analytic = |e: hiam_core::analytic::AnalyticError| CliError::Config(e.to_string());
    let out_of_band = params.gamma.abs() > params.validity_band();
    if let (FundamentalMode::ConstantPf { .. }, false) = (mode, params.analytic_available()) {
        // kappa >= theta: the oscillator formula still evaluates (with zero
        // or negative damping), but no validity band backs it.
        let s = ClosedFormSolution::case_a_formal(params);
        return Ok(Box::new(move |t| (s.m(t), s.price(t), s.pf(t))));
    }
    if matches!(mode, FundamentalMode::FollowPrice { .. }) && out_of_band {
        let f = freeze_prediction(params).map_err(analytic)?;
        Ok(Box::new(move |t| (f.m(t), f.price(t), f.pf(t))))
    } else {
        let s = ClosedFormSolution::new(params, mode).map_err(analytic)?;
        Ok(Box::new(move |t| (s.m(t), s.price(t), s.pf(t))))
    }
}

pub fn analytic_cmd(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let (params, mode) = cfg.params.split();
    require_analytic(&params)?;
    report_warnings(&params, &mode, false)?;
    let curve = prediction(&params, &mode)?;
    let mut m = RunManifest::new("analytic", cfg.params, cfg.t_max, cfg.sample_dt);
    m.note = cfg.note.clone();
    m.outputs.push(write_file(out, "analytic.csv", |w| {
        write_curve_csv(w, cfg.t_max, cfg.sample_dt, &curve)
    })?);
    m.write(out, started)?;
    Ok(m)
}

fn require_analytic(params: &ModelParams) -> Result<(), CliError> {
    if params.analytic_available() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "analytic unavailable: kappa ({}) >= theta ({})",
            params.kappa, params.theta
        )))
    }
}

/// Pretty JSON in struct field order.
pub fn classify_cmd(params_doc: ParamsDocument) -> Result<String, CliError> {
    let (params, mode) = params_doc.split();
    require_analytic(&params)?;
    report_warnings(&params, &mode, false)?;
    let report = classify_pattern(&params, &mode).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

fn sweep_row(doc: ParamsDocument, horizon: f64) -> String {
    let (params, mode) = doc.split();
    let head = format!(
        "{},{},{},{},{},{},{}",
        fmt_f64(doc.lambda),
        fmt_f64(doc.theta),
        fmt_f64(doc.kappa),
        fmt_f64(doc.gamma),
        fmt_f64(doc.p0),
        fmt_f64(doc.m0),
        doc.mode
    );
    if !validate(&params, &mode).is_ok() {
        return format!("{head},invalid,invalid,,");
    }
    if !params.analytic_available() {
        return format!("{head},unavailable,unavailable,,");
    }
    let verdict = match mode {
        FundamentalMode::ConstantPf { .. } => verdict_case_a_until(&params, horizon),
        FundamentalMode::FollowPrice { .. } => verdict_case_b_until(&params, horizon),
    };
    let regime = match mode {
        FundamentalMode::ConstantPf { .. } => derived_constants(&params).regime().as_str(),
        FundamentalMode::FollowPrice { .. } => "first_order",
    };
    match verdict {
        Ok(v) => {
            let t_star = if v.t_star.is_finite() {
                fmt_f64(v.t_star)
            } else {
                "inf".into()
            };
            let first = v.extrema.first().map(|&t| fmt_f64(t)).unwrap_or_default();
            format!("{head},{regime},{},{t_star},{first}", v.pattern.as_str())
        }
        Err(e) => format!("{head},{regime},error: {},,", e.to_string().replace(',', ";")),
    }
}

pub const SWEEP_HEADER: &str = "lambda,theta,kappa,gamma,p0,m0,mode,regime,pattern,t_star,first_extremum";

pub fn sweep_cmd(grid: &SweepGrid, out: &Path) -> Result<PathBuf, CliError> {
    grid.check()?;
    let horizon = grid.horizon.unwrap_or(DEFAULT_LISTING_HORIZON);
    let mut docs = Vec::new();
    for &lambda in &grid.lambda {
        for &theta in &grid.theta {
            for &kappa in &grid.kappa {
                for &gamma in &grid.gamma {
                    for &p0 in &grid.p0 {
                        for &m0 in &grid.m0 {
                            for &mode in &grid.mode {
                                docs.push(ParamsDocument {
                                    lambda,
                                    theta,
                                    kappa,
                                    gamma,
                                    p0,
                                    m0,
                                    n_agents: 2,
                                    mode,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    let rows: Vec<String> = docs.par_iter().map(|&d| sweep_row(d, horizon)).collect();
    write_file(out, "sweep.csv", |w| {
        writeln!(w, "{SWEEP_HEADER}")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })
}

pub fn reproduce_cmd(preset: &PresetConfig, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let (params, mode) = preset.params.split();
    report_warnings(&params, &mode, true)?;
    let mut m = RunManifest::new("reproduce-fig", preset.params, preset.t_max, preset.sample_dt);
    m.note = Some(preset.note.clone());
    m.seeds = Seeds {
        simulation: preset.seed,
        graph: preset.seed,
    };
    m.graphs = preset.graphs.clone();
    if preset.histories > 0 {
        m.histories = Some(preset.histories);
    }
    let sim = SimConfig::new(preset.t_max, preset.sample_dt, preset.seed);
    for spec in &preset.graphs {
        let graph = build_graph(spec, params.n_agents, preset.seed)?;
        let label = graph_label(spec);
        let tr = simulate(&params, &mode, &graph, &sim).map_err(sim_error)?;
        m.outputs.push(write_file(out, &format!("{label}_single.csv"), |w| {
            write_trajectory_csv(w, &tr)
        })?);
        if preset.histories > 0 {
            let stats = run_ensemble(&params, &mode, &graph, &sim, preset.histories).map_err(sim_error)?;
            m.outputs.push(write_file(out, &format!("{label}_ensemble.csv"), |w| {
                write_ensemble_csv(w, &stats)
            })?);
        }
    }
    let curve = prediction(&params, &mode)?;
    let name = match (mode.kind(), params.gamma.abs() > params.validity_band()) {
        (ModeKind::FollowPrice, true) => "freeze_prediction.csv",
        _ => "analytic.csv",
    };
    m.outputs.push(write_file(out, name, |w| {
        write_curve_csv(w, preset.t_max, preset.sample_dt, &curve)
    })?);
    m.write(out, started)?;
    Ok(m)
}
