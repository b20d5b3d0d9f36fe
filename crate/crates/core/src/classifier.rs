//! Validity horizon and extremum structure of the mean price path.
//!
//! The linear mean law holds while the price gap `G(t) = P(t) - P_f(t)`
//! stays inside `[-(theta - kappa), theta - kappa]`; `t*` is the first exit.
//! Interior extrema of `P` on `(0, t*)` are exactly the sign changes of `m`,
//! since `P' = lambda m`.
//!
//! Case A, non-oscillatory (overdamped or critical): `m` has at most one
//! positive root `t0`; `G` is monotone on either side of it and tends to 0.
//! So the horizon is decided entirely by `|gamma|` and `|G(t0)|`.
//!
//! Case A, oscillatory: the roots are equally spaced by `pi/b` and `|G|`
//! at consecutive roots shrinks by `e^{-a pi/b}`, so checking `G` at the
//! first two roots settles everything.
//!
//! Case B: `G = gamma` is constant; `m` relaxes monotonically to `m*`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::analytic::{freeze_prediction, AnalyticError, ClosedFormSolution, FreezePrediction};
use crate::model::{DerivedConstants, FundamentalMode, ModelError, ModelParams, Regime};
use crate::oracle::bisect;

/// Default horizon for listing extrema when there are infinitely many.
pub const DEFAULT_LISTING_HORIZON: f64 = 100.0;

/// Absolute precision of every time the classifier reports.
pub const TIME_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("m has no positive root for these parameters")]
    NoRoot,
    #[error("expected the {expected} regime, found {found}")]
    WrongRegime { expected: &'static str, found: Regime },
    #[error("m0 = gamma = 0: the mean stays at rest and has no roots")]
    AtRest,
    #[error("internal error: root {0} is not bracketed by a sign change of m")]
    UncertifiedRoot(f64),
    #[error("scan gave up at t = {0} without a certificate")]
    ScanExhausted(f64),
}

impl From<AnalyticError> for ClassifierError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::Model(m) => ClassifierError::Model(m),
            // Only price_case_b produces this and the classifier never calls it.
            AnalyticError::OutsideBand { .. } => unreachable!("classifier does not request case-B prices"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Monotonic,
    SingleBounce,
    DampedOscillation,
    ConstantPrice,
    /// Case B from outside the band: the linear law never applies and the
    /// path is the freeze prediction.
    Freeze,
}

impl Pattern {
    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Monotonic => "monotonic",
            Pattern::SingleBounce => "single_bounce",
            Pattern::DampedOscillation => "damped_oscillation",
            Pattern::ConstantPrice => "constant_price",
            Pattern::Freeze => "freeze",
        }
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Total number of interior extrema on `(0, t*)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremaTotal {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    A,
    B,
}

/// Serialises `f64::INFINITY` as the string `"inf"`.
pub fn serialize_time<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremaVerdict {
    #[serde(serialize_with = "serialize_time")]
    pub t_star: f64,
    pub pattern: Pattern,
    /// Extremum abscissae inside `(0, min(t*, horizon))`.
    pub extrema: Vec<f64>,
    #[serde(skip)]
    pub total: ExtremaTotal,
    pub conditions: BTreeMap<&'static str, bool>,
    pub constants: DerivedConstants,
    #[serde(skip)]
    pub case: Case,
}

impl ExtremaVerdict {
    /// Number of extrema strictly inside `(0, min(t*, horizon))`.
    pub fn count_before(&self, horizon: f64) -> usize {
        let end = self.t_star.min(horizon);
        self.extrema.iter().filter(|&&t| t > 0.0 && t < end).count()
    }
}

/// `A cos(bt) + B sin(bt) = K sin(bt + psi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudePhase {
    pub amplitude: f64,
    pub phase: f64,
    pub b: f64,
}

impl AmplitudePhase {
    pub fn from_components(cos_coef: f64, sin_coef: f64, b: f64) -> Self {
        AmplitudePhase {
            amplitude: cos_coef.hypot(sin_coef),
            phase: cos_coef.atan2(sin_coef),
            b,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.b * t + self.phase).sin()
    }

    /// `e^{-at}` times the oscillation.
    pub fn eval_damped(&self, a: f64, t: f64) -> f64 {
        (-a * t).exp() * self.eval(t)
    }

    pub fn envelope(&self, a: f64, t: f64) -> f64 {
        self.amplitude * (-a * t).exp()
    }
}

/// Amplitude-phase form of the gap `G(t) = e^{-at}[gamma cos + (lambda m0 +
/// a gamma)/b sin]` in the oscillatory regime.
pub fn gap_amplitude_phase(params: &ModelParams, b: f64, a: f64) -> AmplitudePhase {
    AmplitudePhase::from_components(params.gamma, (params.lambda * params.m0 + a * params.gamma) / b, b)
}

/// Unique positive root of `m` in the overdamped regime,
/// `t0 = (1/2c) ln((a + Delta + c)/(a + Delta - c))`, `Delta = gamma/(theta m0)`.
pub fn bounce_time_t0(params: &ModelParams) -> Result<f64, ClassifierError> {
    params.require_analytic()?;
    let d = crate::model::derived_constants(params);
    let c = match (d.regime(), d.c) {
        (Regime::Overdamped, Some(c)) => c,
        (found, _) => {
            return Err(ClassifierError::WrongRegime {
                expected: "overdamped",
                found,
            })
        }
    };
    overdamped_root(params, d.a, c).ok_or(ClassifierError::NoRoot)
}

fn overdamped_root(params: &ModelParams, a: f64, c: f64) -> Option<f64> {
    if params.m0 == 0.0 {
        return None;
    }
    let delta = params.gamma / (params.theta * params.m0);
    let lower = a + delta - c;
    // Delta > c - a, written so that equality is exact.
    if lower > 0.0 {
        Some((2.0 * c / lower).ln_1p() / (2.0 * c))
    } else {
        None
    }
}

/// Positive root of `m` on the critical line: `m0 = (a m0 + g) t`.
fn critical_root(params: &ModelParams, a: f64) -> Option<f64> {
    if params.m0 == 0.0 {
        return None;
    }
    let k = a * params.m0 + params.gamma / params.theta;
    let t = params.m0 / k;
    (k != 0.0 && t > 0.0).then_some(t)
}

/// The first `k` non-negative roots of `m` in the oscillatory regime. Each one
/// is certified by a sign change of the closed-form `m` (or an exact zero)
/// within `+-1e-9`.
pub fn oscillation_roots(params: &ModelParams, k: usize) -> Result<Vec<f64>, ClassifierError> {
    let sol = ClosedFormSolution::case_a(params)?;
    let b = match (sol.regime(), sol.constants.b) {
        (Some(Regime::Underdamped), Some(b)) => b,
        (found, _) => {
            return Err(ClassifierError::WrongRegime {
                expected: "underdamped",
                found: found.unwrap_or(Regime::Critical),
            })
        }
    };
    if params.m0 == 0.0 && params.gamma == 0.0 {
        return Err(ClassifierError::AtRest);
    }
    let roots = raw_oscillation_roots(params, sol.constants.a, b, k);
    for &t in &roots {
        certify_root(&sol, t)?;
    }
    Ok(roots)
}

fn raw_oscillation_roots(params: &ModelParams, a: f64, b: f64, k: usize) -> Vec<f64> {
    // m e^{at} = m0 cos(bt) - q sin(bt) = R sin(bt + phi), q = (a m0 + g)/b.
    let q = (a * params.m0 + params.gamma / params.theta) / b;
    let phi = params.m0.atan2(-q);
    // Zeros at bt + phi = j pi; the first non-negative one.
    let mut base = (-phi).rem_euclid(PI);
    if params.m0 == 0.0 {
        base = 0.0;
    }
    (0..k).map(|j| (base + j as f64 * PI) / b).collect()
}

fn certify_root(sol: &ClosedFormSolution, t: f64) -> Result<(), ClassifierError> {
    const W: f64 = 1e-9;
    if sol.m(t) == 0.0 {
        return Ok(());
    }
    let (lo, hi) = (sol.m((t - W).max(0.0)), sol.m(t + W));
    if lo * hi <= 0.0 {
        Ok(())
    } else {
        Err(ClassifierError::UncertifiedRoot(t))
    }
}

/// First `t` in `[lo, hi]` with `|G(t)| > band`, for `|G|` monotone there,
/// `|G(lo)| <= band < |G(hi)|`.
fn band_crossing(sol: &ClosedFormSolution, band: f64, lo: f64, hi: f64) -> f64 {
    bisect(|t| sol.gap(t).abs() - band, lo, hi, TIME_TOLERANCE)
}

/// `|gamma| > band`, or `|gamma| == band` with the gap starting to move
/// outward (`G'(0) = lambda m0`). With `m0 = 0` the curvature
/// `-lambda gamma/theta` always points back inside.
fn exits_immediately(p: &ModelParams, band: f64) -> bool {
    p.gamma.abs() > band || (p.gamma.abs() == band && p.m0 != 0.0 && p.m0.signum() == p.gamma.signum())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    t_star: f64,
    mut extrema: Vec<f64>,
    total: ExtremaTotal,
    conditions: BTreeMap<&'static str, bool>,
    constants: DerivedConstants,
    case: Case,
    at_rest: bool,
    horizon: f64,
) -> ExtremaVerdict {
    let end = t_star.min(horizon);
    extrema.retain(|&t| t > 0.0 && t < end);
    let pattern = if at_rest {
        Pattern::ConstantPrice
    } else {
        match total {
            ExtremaTotal::Finite(0) => Pattern::Monotonic,
            ExtremaTotal::Finite(1) => Pattern::SingleBounce,
            _ => Pattern::DampedOscillation,
        }
    };
    ExtremaVerdict {
        t_star,
        pattern,
        extrema,
        total,
        conditions,
        constants,
        case,
    }
}

pub fn verdict_case_a(params: &ModelParams) -> Result<ExtremaVerdict, ClassifierError> {
    verdict_case_a_until(params, DEFAULT_LISTING_HORIZON)
}

/// As [`verdict_case_a`], listing extrema up to `horizon` (the count in
/// [`ExtremaVerdict::total`] is not truncated).
pub fn verdict_case_a_until(params: &ModelParams, horizon: f64) -> Result<ExtremaVerdict, ClassifierError> {
    let sol = ClosedFormSolution::case_a(params)?;
    let band = params.validity_band();
    let d = sol.constants;
    let at_rest = params.m0 == 0.0 && params.gamma == 0.0;
    let mut cond = BTreeMap::new();

    if at_rest {
        cond.insert("gamma_within_band", true);
        return Ok(finish(
            f64::INFINITY,
            vec![],
            ExtremaTotal::Finite(0),
            cond,
            d,
            Case::A,
            true,
            horizon,
        ));
    }

    let regime = sol.regime().expect("case A");
    if regime == Regime::Underdamped {
        return oscillatory_verdict(&sol, band, horizon);
    }

    let gamma_ok = params.gamma.abs() <= band;
    let m0_nonzero = params.m0 != 0.0;
    let root = match regime {
        Regime::Overdamped => overdamped_root(params, d.a, d.c.expect("overdamped")),
        _ => critical_root(params, d.a),
    };
    cond.insert("gamma_within_band", gamma_ok);
    cond.insert("m0_nonzero", m0_nonzero);
    cond.insert("root_condition", root.is_some());
    let bounce_ok = root.map(|t0| sol.gap(t0).abs() < band);
    if let Some(ok) = bounce_ok {
        cond.insert("bounce_within_band", ok);
    }
    if let Some(t0) = root {
        certify_root(&sol, t0)?;
    }

    let mono = |t_star: f64| {
        finish(
            t_star,
            vec![],
            ExtremaTotal::Finite(0),
            cond.clone(),
            d,
            Case::A,
            false,
            horizon,
        )
    };
    if exits_immediately(params, band) {
        return Ok(mono(0.0));
    }
    Ok(match (root, bounce_ok) {
        (Some(t0), Some(true)) => finish(
            f64::INFINITY,
            vec![t0],
            ExtremaTotal::Finite(1),
            cond.clone(),
            d,
            Case::A,
            false,
            horizon,
        ),
        // The gap grows monotonically up to t0 and leaves the band on the way.
        (Some(t0), _) => mono(band_crossing(&sol, band, 0.0, t0)),
        // No interior root: |G| decays monotonically from |gamma|.
        _ => mono(f64::INFINITY),
    })
}

fn oscillatory_verdict(sol: &ClosedFormSolution, band: f64, horizon: f64) -> Result<ExtremaVerdict, ClassifierError> {
    let params = &sol.params;
    let d = sol.constants;
    let b = d.b.expect("underdamped");
    let roots = oscillation_roots(params, 2)?;
    let (t1, t2) = (roots[0], roots[1]);
    let within = params.gamma.abs() <= band;
    let first_ok = sol.gap(t1).abs() <= band;
    let second_ok = sol.gap(t2).abs() <= band;
    let mut cond = BTreeMap::new();
    cond.insert("gamma_within_band", within);
    cond.insert("first_root_within_band", first_ok);
    cond.insert("second_root_within_band", second_ok);

    let interior = |t: f64| t > 0.0;
    let verdict = |t_star: f64, extrema: Vec<f64>, total: ExtremaTotal| {
        finish(t_star, extrema, total, cond.clone(), d, Case::A, false, horizon)
    };
    if !within || exits_immediately(params, band) {
        return Ok(verdict(0.0, vec![], ExtremaTotal::Finite(0)));
    }
    if !first_ok {
        return Ok(verdict(
            band_crossing(sol, band, 0.0, t1),
            vec![],
            ExtremaTotal::Finite(0),
        ));
    }
    if !second_ok {
        let t_star = band_crossing(sol, band, t1, t2);
        let extrema: Vec<f64> = [t1].into_iter().filter(|&t| interior(t)).collect();
        let n = extrema.len();
        return Ok(verdict(t_star, extrema, ExtremaTotal::Finite(n)));
    }
    // Every later lobe is smaller by e^{-a pi/b}; list roots up to the horizon.
    let step = PI / b;
    let first = if interior(t1) { t1 } else { t2 };
    let count = if horizon.is_finite() {
        ((horizon - first) / step).ceil().max(0.0) as usize + 1
    } else {
        0
    };
    let extrema = (0..count).map(|j| first + j as f64 * step).collect();
    Ok(verdict(f64::INFINITY, extrema, ExtremaTotal::Infinite))
}

pub fn verdict_case_b(params: &ModelParams) -> Result<ExtremaVerdict, ClassifierError> {
    verdict_case_b_until(params, DEFAULT_LISTING_HORIZON)
}

pub fn verdict_case_b_until(params: &ModelParams, horizon: f64) -> Result<ExtremaVerdict, ClassifierError> {
    let sol = ClosedFormSolution::case_b(params)?;
    let band = params.validity_band();
    let within = params.gamma.abs() <= band;
    let same_sign = params.m0 != 0.0 && params.gamma != 0.0 && params.m0.signum() == params.gamma.signum();
    let mut cond = BTreeMap::new();
    cond.insert("gamma_within_band", within);
    cond.insert("same_sign", same_sign);
    let at_rest = params.m0 == 0.0 && params.gamma == 0.0;
    if !within {
        let mut v = finish(
            0.0,
            vec![],
            ExtremaTotal::Finite(0),
            cond,
            sol.constants,
            Case::B,
            false,
            horizon,
        );
        v.pattern = Pattern::Freeze;
        return Ok(v);
    }
    if same_sign {
        let ms = -params.gamma / band;
        let rate = 1.0 - params.kappa / params.theta;
        let t = (-params.m0 / ms).ln_1p() / rate;
        certify_root(&sol, t)?;
        return Ok(finish(
            f64::INFINITY,
            vec![t],
            ExtremaTotal::Finite(1),
            cond,
            sol.constants,
            Case::B,
            false,
            horizon,
        ));
    }
    Ok(finish(
        f64::INFINITY,
        vec![],
        ExtremaTotal::Finite(0),
        cond,
        sol.constants,
        Case::B,
        at_rest,
        horizon,
    ))
}

/// Validity horizon by brute force: scan `|G|` on a grid of
/// `1e-3 / sqrt(lambda/theta)`, bisect the first exit to 1e-10, and stop
/// early once an envelope bound proves `|G|` can never reach the band.
pub fn t_star_numeric(params: &ModelParams, mode: &FundamentalMode) -> Result<f64, ClassifierError> {
    params.require_analytic()?;
    let band = params.validity_band();
    if let FundamentalMode::FollowPrice { .. } = mode {
        return Ok(if params.gamma.abs() <= band { f64::INFINITY } else { 0.0 });
    }
    let sol = ClosedFormSolution::case_a(params)?;
    if exits_immediately(params, band) {
        return Ok(0.0);
    }
    if params.m0 == 0.0 && params.gamma == 0.0 {
        return Ok(f64::INFINITY);
    }

    let d = sol.constants;
    let a = d.a;
    let h = 1e-3 / (params.lambda / params.theta).sqrt();
    let bound = envelope_bound(params, &d, sol.detuning());
    let outside = |t: f64| sol.gap(t).abs() > band;

    const MAX_STEPS: usize = 200_000_000;
    let mut prev = 0.0;
    for k in 1..=MAX_STEPS {
        let t = k as f64 * h;
        if outside(t) {
            return Ok(bisect(|s| sol.gap(s).abs() - band, prev, t, TIME_TOLERANCE));
        }
        // G has its extrema at the roots of m; catch a peak between samples.
        let (m_prev, m_now) = (sol.m(prev), sol.m(t));
        if m_prev != 0.0 && m_now != 0.0 && (m_prev > 0.0) != (m_now > 0.0) {
            let root = bisect(|s| sol.m(s), prev, t, 1e-14);
            if outside(root) {
                return Ok(bisect(|s| sol.gap(s).abs() - band, prev, root, TIME_TOLERANCE));
            }
        }
        if bound.certifies(t, band, a) {
            return Ok(f64::INFINITY);
        }
        prev = t;
    }
    Err(ClassifierError::ScanExhausted(prev))
}

/// Decreasing upper bounds on `|G(s)|` for all `s >= t`.
enum EnvelopeBound {
    /// `K e^{-as}` from the amplitude-phase form.
    Oscillatory(AmplitudePhase),
    /// `e^{-(a-c)s}(|gamma| + |B| s)`, valid because `|C| <= e^{cs}` and
    /// `|S| <= s e^{cs}`; decreasing once `s >= 1/(a-c) - |gamma|/|B|`.
    Growth { rate: f64, g0: f64, slope: f64 },
}

impl EnvelopeBound {
    fn certifies(&self, t: f64, band: f64, a: f64) -> bool {
        match self {
            EnvelopeBound::Oscillatory(ap) => ap.envelope(a, t) <= band,
            EnvelopeBound::Growth { rate, g0, slope } => {
                let peak = if *slope > 0.0 { 1.0 / rate - g0 / slope } else { 0.0 };
                t >= peak && (-rate * t).exp() * (g0 + slope * t) <= band
            }
        }
    }
}

fn envelope_bound(params: &ModelParams, d: &DerivedConstants, detuning: f64) -> EnvelopeBound {
    let a = d.a;
    match d.b {
        Some(b) if d.regime() == Regime::Underdamped => EnvelopeBound::Oscillatory(gap_amplitude_phase(params, b, a)),
        _ => {
            let c = detuning.max(0.0).sqrt();
            EnvelopeBound::Growth {
                // a - c = (lambda/theta)/(a + c), without cancellation.
                rate: d.omega0_sq / (a + c),
                g0: params.gamma.abs(),
                slope: (params.lambda * params.m0 + a * params.gamma).abs(),
            }
        }
    }
}

/// Values of the three control parameters at which the regime flips, each
/// with the other two held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalValues {
    /// `theta (1 - 2 sqrt(lambda/theta))`; absent when negative (always
    /// underdamped in kappa).
    pub kappa_c: Option<f64>,
    /// `(sqrt(lambda) + sqrt(lambda + kappa))^2`.
    pub theta_c: f64,
    /// `(theta - kappa)^2 / (4 theta)`.
    pub lambda_c: f64,
}

pub fn critical_values(params: &ModelParams) -> CriticalValues {
    let kc = params.theta * (1.0 - 2.0 * (params.lambda / params.theta).sqrt());
    CriticalValues {
        kappa_c: (kc >= 0.0).then_some(kc),
        theta_c: (params.lambda.sqrt() + (params.lambda + params.kappa).sqrt()).powi(2),
        lambda_c: (params.theta - params.kappa).powi(2) / (4.0 * params.theta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternReport {
    pub case: Case,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    pub pattern: Pattern,
    pub verdict: ExtremaVerdict,
    pub critical: CriticalValues,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze: Option<FreezePrediction>,
}

pub fn classify_pattern(params: &ModelParams, mode: &FundamentalMode) -> Result<PatternReport, ClassifierError> {
    params.require_analytic()?;
    let critical = critical_values(params);
    match mode {
        FundamentalMode::ConstantPf { .. } => {
            let verdict = verdict_case_a(params)?;
            Ok(PatternReport {
                case: Case::A,
                regime: Some(verdict.constants.regime()),
                pattern: verdict.pattern,
                verdict,
                critical,
                freeze: None,
            })
        }
        FundamentalMode::FollowPrice { .. } => {
            let verdict = verdict_case_b(params)?;
            let freeze = if params.gamma.abs() > params.validity_band() {
                Some(freeze_prediction(params)?)
            } else {
                None
            };
            Ok(PatternReport {
                case: Case::B,
                regime: None,
                pattern: verdict.pattern,
                verdict,
                critical,
                freeze,
            })
        }
    }
}
