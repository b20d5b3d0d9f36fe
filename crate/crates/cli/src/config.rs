//! Run configuration documents, command-line overrides and built-in presets.

use std::fs;
use std::path::Path;

use hiam_core::model::ParamsDocument;
use hiam_core::network::GraphSpec;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::CliError;

const PARAM_KEYS: [&str; 8] = ["lambda", "theta", "kappa", "gamma", "p0", "m0", "n_agents", "mode"];

fn default_graph() -> GraphSpec {
    GraphSpec::FullyConnected
}

fn default_t_max() -> f64 {
    10.0
}

fn default_sample_dt() -> f64 {
    0.01
}

fn default_histories() -> u64 {
    100
}

/// One model run: parameters, graph recipe, seeds and sampling grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub note: Option<String>,
    pub params: ParamsDocument,
    #[serde(default = "default_graph")]
    pub graph: GraphSpec,
    #[serde(default)]
    pub seed: u64,
    /// Seed for random graph construction; defaults to `seed`.
    #[serde(default)]
    pub graph_seed: Option<u64>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    #[serde(default = "default_histories")]
    pub histories: u64,
}

impl RunConfig {
    pub fn graph_seed(&self) -> u64 {
        self.graph_seed.unwrap_or(self.seed)
    }
}

/// A built-in preset: one parameter set simulated on several graphs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub note: String,
    pub params: ParamsDocument,
    pub graphs: Vec<GraphSpec>,
    pub seed: u64,
    pub t_max: f64,
    pub sample_dt: f64,
    /// Ensemble size per graph; 0 runs single histories only.
    pub histories: u64,
}

/// Per-parameter value lists; rows are their Cartesian product.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
    pub p0: Vec<f64>,
    pub m0: Vec<f64>,
    pub mode: Vec<hiam_core::model::ModeKind>,
    /// Extremum listing horizon for the `first_extremum` column.
    #[serde(default)]
    pub horizon: Option<f64>,
}

impl SweepGrid {
    pub fn check(&self) -> Result<(), CliError> {
        let lens = [
            ("lambda", self.lambda.len()),
            ("theta", self.theta.len()),
            ("kappa", self.kappa.len()),
            ("gamma", self.gamma.len()),
            ("p0", self.p0.len()),
            ("m0", self.m0.len()),
            ("mode", self.mode.len()),
        ];
        match lens.iter().find(|(_, n)| *n == 0) {
            Some((key, _)) => Err(CliError::Config(format!("sweep grid: list for `{key}` is empty"))),
            None => Ok(()),
        }
    }
}

pub const PRESETS: [(&str, &str); 3] = [
    ("1", include_str!("../presets/fig1.json")),
    ("2", include_str!("../presets/fig2.json")),
    ("3", include_str!("../presets/fig3.json")),
];

pub fn preset(id: &str) -> Result<PresetConfig, CliError> {
    let key = id.strip_prefix("fig").unwrap_or(id);
    let text = PRESETS
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, text)| *text)
        .ok_or_else(|| CliError::Config(format!("unknown preset id {id:?} (expected 1, 2 or 3)")))?;
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("preset {key}: {e}")))
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Apply `KEY=VALUE` overrides. Parameter keys go into the `params` object,
/// anything else to the top level. Values are parsed as JSON, falling back to
/// a plain string.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    let root = doc
        .as_object_mut()
        .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {item:?} is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let key = key.trim();
        if PARAM_KEYS.contains(&key) {
            let params = root
                .entry("params")
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| CliError::Config("`params` must be a JSON object".into()))?;
            params.insert(key.to_string(), value);
        } else {
            root.insert(key.to_string(), value);
        }
    }
    Ok(())
}

pub fn set_top(doc: &mut Value, key: &str, value: Value) {
    if let Some(root) = doc.as_object_mut() {
        root.insert(key.to_string(), value);
    }
}

pub fn decode<T: DeserializeOwned>(doc: Value, origin: &str) -> Result<T, CliError> {
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}
