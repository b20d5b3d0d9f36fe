//! Market parameters, the oscillator shorthand derived from them, and the
//! damping regime.
//!
//! Everything downstream (simulator, closed forms, classifier, oracle) reads
//! its numbers from [`ModelParams`]; nothing else carries parameters around.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `|D|` at or below this is treated as the critical (repeated-root) case.
pub const CRITICAL_TOLERANCE: f64 = 1e-9;

/// Inside this band the closed forms switch to series evaluation of the
/// oscillator basis to avoid dividing by a vanishing `b` or `c`.
pub const NEAR_CRITICAL_BAND: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub theta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub p0: f64,
    pub m0: f64,
    pub n_agents: usize,
}

impl ModelParams {
    /// Width of the band `|P - P_f| <= theta - kappa` inside which the mean
    /// dynamics is exactly linear.
    pub fn validity_band(&self) -> f64 {
        self.theta - self.kappa
    }

    pub fn analytic_available(&self) -> bool {
        self.theta > self.kappa
    }

    pub(crate) fn require_analytic(&self) -> Result<(), ModelError> {
        if self.theta > 0.0 && self.analytic_available() {
            Ok(())
        } else {
            Err(ModelError::AnalyticUnavailable {
                kappa: self.kappa,
                theta: self.theta,
            })
        }
    }
}

/// How the average fundamental value evolves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FundamentalMode {
    /// Case A: `P_f` is pinned at `pf0` forever.
    ConstantPf { pf0: f64 },
    /// Case B: `P_f(t) = P(t) - gamma` at every instant.
    FollowPrice { gamma: f64 },
}

impl FundamentalMode {
    pub fn constant(params: &ModelParams) -> Self {
        FundamentalMode::ConstantPf {
            pf0: params.p0 - params.gamma,
        }
    }

    pub fn follow(params: &ModelParams) -> Self {
        FundamentalMode::FollowPrice { gamma: params.gamma }
    }

    pub fn from_kind(kind: ModeKind, params: &ModelParams) -> Self {
        match kind {
            ModeKind::ConstantPf => Self::constant(params),
            ModeKind::FollowPrice => Self::follow(params),
        }
    }

    pub fn kind(&self) -> ModeKind {
        match self {
            FundamentalMode::ConstantPf { .. } => ModeKind::ConstantPf,
            FundamentalMode::FollowPrice { .. } => ModeKind::FollowPrice,
        }
    }

    /// Fundamental value given the current price.
    #[inline]
    pub fn pf(&self, price: f64) -> f64 {
        match *self {
            FundamentalMode::ConstantPf { pf0 } => pf0,
            FundamentalMode::FollowPrice { gamma } => price - gamma,
        }
    }

    /// The offset `gamma` implied by this mode at the initial price `p0`.
    pub fn implied_gamma(&self, p0: f64) -> f64 {
        match *self {
            FundamentalMode::ConstantPf { pf0 } => p0 - pf0,
            FundamentalMode::FollowPrice { gamma } => gamma,
        }
    }
}

/// The mode label used in configuration documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    ConstantPf,
    FollowPrice,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::ConstantPf => "constant_pf",
            ModeKind::FollowPrice => "follow_price",
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModeKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant_pf" => Ok(ModeKind::ConstantPf),
            "follow_price" => Ok(ModeKind::FollowPrice),
            other => Err(ModelError::UnknownMode(other.to_string())),
        }
    }
}

/// Flat configuration document: the seven parameters plus the mode label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub lambda: f64,
    pub theta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub p0: f64,
    pub m0: f64,
    pub n_agents: usize,
    pub mode: ModeKind,
}

impl ParamsDocument {
    pub fn split(self) -> (ModelParams, FundamentalMode) {
        let params = ModelParams {
            lambda: self.lambda,
            theta: self.theta,
            kappa: self.kappa,
            gamma: self.gamma,
            p0: self.p0,
            m0: self.m0,
            n_agents: self.n_agents,
        };
        (params, FundamentalMode::from_kind(self.mode, &params))
    }

    pub fn join(params: &ModelParams, mode: ModeKind) -> Self {
        ParamsDocument {
            lambda: params.lambda,
            theta: params.theta,
            kappa: params.kappa,
            gamma: params.gamma,
            p0: params.p0,
            m0: params.m0,
            n_agents: params.n_agents,
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("lambda must be > 0 (got {0})")]
    NonPositiveLambda(f64),
    #[error("lambda must be >= 0 (got {0})")]
    NegativeLambda(f64),
    #[error("theta must be > 0 (got {0})")]
    NonPositiveTheta(f64),
    #[error("kappa must be >= 0 (got {0})")]
    NegativeKappa(f64),
    #[error("|m0| must be <= 1 (got {0})")]
    DemandOutOfRange(f64),
    #[error("n_agents must be >= 2 (got {0})")]
    TooFewAgents(usize),
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("mode implies gamma = {implied} but params carry gamma = {declared}")]
    ModeMismatch { implied: f64, declared: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Warning {
    #[error("kappa ({kappa}) >= theta ({theta}): analytic results unavailable")]
    AnalyticUnavailable { kappa: f64, theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<Warning>, ModelError> {
        if self.violations.is_empty() {
            Ok(self.warnings)
        } else {
            Err(ModelError::Invalid(self.violations))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameters: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("analytic results unavailable: kappa ({kappa}) >= theta ({theta})")]
    AnalyticUnavailable { kappa: f64, theta: f64 },
    #[error("unknown mode {0:?} (expected \"constant_pf\" or \"follow_price\")")]
    UnknownMode(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Full validation: everything the analytic side needs except `theta > kappa`,
/// which only produces a warning.
pub fn validate(params: &ModelParams, mode: &FundamentalMode) -> ValidationReport {
    check(params, mode, true)
}

/// The simulator tolerates `lambda == 0` (a frozen price is a perfectly good
/// Markov chain), so it uses this relaxed check.
pub fn validate_for_simulation(params: &ModelParams, mode: &FundamentalMode) -> ValidationReport {
    check(params, mode, false)
}

fn check(p: &ModelParams, mode: &FundamentalMode, strict_lambda: bool) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;
    for (name, x) in [
        ("lambda", p.lambda),
        ("theta", p.theta),
        ("kappa", p.kappa),
        ("gamma", p.gamma),
        ("p0", p.p0),
        ("m0", p.m0),
    ] {
        if !x.is_finite() {
            v.push(Violation::NonFinite(name));
        }
    }
    if strict_lambda && !(p.lambda > 0.0) {
        v.push(Violation::NonPositiveLambda(p.lambda));
    } else if !strict_lambda && !(p.lambda >= 0.0) {
        v.push(Violation::NegativeLambda(p.lambda));
    }
    if !(p.theta > 0.0) {
        v.push(Violation::NonPositiveTheta(p.theta));
    }
    if !(p.kappa >= 0.0) {
        v.push(Violation::NegativeKappa(p.kappa));
    }
    if !(p.m0.abs() <= 1.0) {
        v.push(Violation::DemandOutOfRange(p.m0));
    }
    if p.n_agents < 2 {
        v.push(Violation::TooFewAgents(p.n_agents));
    }
    let implied = mode.implied_gamma(p.p0);
    let scale = 1.0_f64.max(p.p0.abs()).max(p.gamma.abs());
    if !((implied - p.gamma).abs() <= 1e-12 * scale) {
        v.push(Violation::ModeMismatch {
            implied,
            declared: p.gamma,
        });
    }
    if p.kappa >= p.theta {
        report.warnings.push(Warning::AnalyticUnavailable {
            kappa: p.kappa,
            theta: p.theta,
        });
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Overdamped,
    Critical,
    Underdamped,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Overdamped => "overdamped",
            Regime::Critical => "critical",
            Regime::Underdamped => "underdamped",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub a: f64,
    pub b: Option<f64>,
    pub c: Option<f64>,
    #[serde(rename = "D")]
    pub disc: f64,
    /// `lambda / theta`, the squared natural frequency.
    #[serde(skip)]
    pub omega0_sq: f64,
    /// Signed `a^2 - lambda/theta` (= `c^2`, or `-b^2`), computed as
    /// `(D/2)(a + sqrt(lambda/theta))` so it keeps full relative precision
    /// near the critical line.
    #[serde(skip)]
    pub detuning: f64,
}

impl DerivedConstants {
    pub fn regime(&self) -> Regime {
        if self.disc.abs() <= CRITICAL_TOLERANCE {
            Regime::Critical
        } else if self.disc > 0.0 {
            Regime::Overdamped
        } else {
            Regime::Underdamped
        }
    }
}

pub fn derived_constants(params: &ModelParams) -> DerivedConstants {
    let ratio = params.kappa / params.theta;
    let omega0_sq = params.lambda / params.theta;
    let omega0 = omega0_sq.sqrt();
    let a = 0.5 * (1.0 - ratio);
    let disc = 1.0 - ratio - 2.0 * omega0;
    // a - omega0 = D/2 exactly in real arithmetic; the product form avoids
    // subtracting two nearly equal squares.
    let detuning = 0.5 * disc * (a + omega0);
    let (b, c) = if disc.abs() <= CRITICAL_TOLERANCE {
        (None, None)
    } else if disc > 0.0 {
        (None, Some(detuning.max(0.0).sqrt()))
    } else {
        (Some((-detuning).max(0.0).sqrt()), None)
    };
    DerivedConstants {
        a,
        b,
        c,
        disc,
        omega0_sq,
        detuning,
    }
}

pub fn classify_regime(params: &ModelParams) -> Regime {
    derived_constants(params).regime()
}
