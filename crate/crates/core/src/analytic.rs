//! Closed-form mean dynamics.
//!
//! Case A (constant fundamental) is a damped oscillator
//! `m'' + 2a m' + (lambda/theta) m = 0` with `m(0) = m0`,
//! `m'(0) = -2a m0 - gamma/theta`. All three regimes are written through one
//! pair of basis functions
//!
//! ```text
//! C(t) = cosh(ct) | 1 | cos(bt)        S(t) = sinh(ct)/c | t | sin(bt)/b
//! m(t) = e^{-at} [ m0 C - (a m0 + g) S ],                     g = gamma/theta
//! P(t) - P_f = e^{-at} [ gamma C + (lambda m0 + a gamma) S ]
//! ```
//!
//! where the second line is `gamma + lambda * int_0^t m`, obtained from the
//! identity `gamma + lambda int m = -theta (m' + 2a m)`. The basis is
//! evaluated by its Taylor series in `s t^2` (`s = a^2 - lambda/theta`)
//! whenever that product is small, which keeps the formulas exact across the
//! critical line without ever dividing by `b` or `c`.
//!
//! Case B (fundamental follows price) is first order and relaxes to
//! `m* = -gamma/(theta - kappa)`; when `|m*|` would leave `[-1, 1]` the
//! population freezes into all-buy or all-sell and [`FreezePrediction`] takes
//! over.

use serde::Serialize;
use thiserror::Error;

use crate::model::{derived_constants, DerivedConstants, ModelError, ModelParams, Regime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "|gamma| = {gamma} exceeds theta - kappa = {band}: the linear price law does not apply (see freeze_prediction)"
    )]
    OutsideBand { gamma: f64, band: f64 },
}

/// `(C(t), S(t))` for signed detuning `s`; `C' = s S`, `S' = C`.
pub fn oscillator_basis(s: f64, t: f64) -> (f64, f64) {
    let x = s * t * t;
    if x.abs() <= 0.25 {
        // C = sum x^k/(2k)!, S = t sum x^k/(2k+1)!
        let (mut c_term, mut s_term) = (1.0, 1.0);
        let (mut c_sum, mut s_sum) = (1.0, 1.0);
        for k in 1..40 {
            let k = k as f64;
            c_term *= x / ((2.0 * k - 1.0) * (2.0 * k));
            s_term *= x / ((2.0 * k) * (2.0 * k + 1.0));
            c_sum += c_term;
            s_sum += s_term;
            if c_term.abs() < 1e-18 * c_sum.abs() && s_term.abs() < 1e-18 * s_sum.abs() {
                break;
            }
        }
        (c_sum, t * s_sum)
    } else if s > 0.0 {
        let c = s.sqrt();
        ((c * t).cosh(), (c * t).sinh() / c)
    } else {
        let b = (-s).sqrt();
        ((b * t).cos(), (b * t).sin() / b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    CaseA(Regime),
    CaseB,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormSolution {
    pub params: ModelParams,
    pub constants: DerivedConstants,
    pub kind: SolutionKind,
    /// Detuning actually used by the basis: exactly 0 on the critical line.
    s: f64,
}

impl ClosedFormSolution {
    pub fn case_a(params: &ModelParams) -> Result<Self, AnalyticError> {
        params.require_analytic()?;
        Ok(Self::case_a_formal(params))
    }

    /// Case A formulas without the `theta > kappa` guard. With `kappa >=
    /// theta` the mean-field law is not established, but the formal
    /// oscillator is still the natural overlay (e.g. `kappa = theta` gives an
    /// undamped cosine).
    pub fn case_a_formal(params: &ModelParams) -> Self {
        let constants = derived_constants(params);
        let regime = constants.regime();
        let s = if regime == Regime::Critical {
            0.0
        } else {
            constants.detuning
        };
        ClosedFormSolution {
            params: *params,
            constants,
            kind: SolutionKind::CaseA(regime),
            s,
        }
    }

    pub fn case_b(params: &ModelParams) -> Result<Self, AnalyticError> {
        params.require_analytic()?;
        Ok(ClosedFormSolution {
            params: *params,
            constants: derived_constants(params),
            kind: SolutionKind::CaseB,
            s: 0.0,
        })
    }

    pub fn new(params: &ModelParams, mode: &crate::model::FundamentalMode) -> Result<Self, AnalyticError> {
        match mode {
            crate::model::FundamentalMode::ConstantPf { .. } => Self::case_a(params),
            crate::model::FundamentalMode::FollowPrice { .. } => Self::case_b(params),
        }
    }

    pub fn regime(&self) -> Option<Regime> {
        match self.kind {
            SolutionKind::CaseA(r) => Some(r),
            SolutionKind::CaseB => None,
        }
    }

    /// Signed `a^2 - lambda/theta` used by the basis.
    pub fn detuning(&self) -> f64 {
        self.s
    }

    fn g(&self) -> f64 {
        self.params.gamma / self.params.theta
    }

    pub fn m(&self, t: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            SolutionKind::CaseA(_) => {
                let a = self.constants.a;
                let (c, s) = oscillator_basis(self.s, t);
                (-a * t).exp() * (p.m0 * c - (a * p.m0 + self.g()) * s)
            }
            SolutionKind::CaseB => {
                let ms = m_star_unchecked(p);
                (p.m0 - ms) * (-2.0 * self.constants.a * t).exp() + ms
            }
        }
    }

    /// Time derivative of `m`.
    pub fn dm(&self, t: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            SolutionKind::CaseA(_) => {
                let a = self.constants.a;
                let k = a * p.m0 + self.g();
                let (c, s) = oscillator_basis(self.s, t);
                // d/dt e^{-at}[m0 C - k S] with C' = sS, S' = C
                (-a * t).exp() * ((-a * p.m0 - k) * c + (a * k + self.s * p.m0) * s)
            }
            SolutionKind::CaseB => {
                let r = 2.0 * self.constants.a;
                -r * (p.m0 - m_star_unchecked(p)) * (-r * t).exp()
            }
        }
    }

    /// `P(t) - P_f(t)`: the quantity whose magnitude must stay within
    /// `theta - kappa`. Equals `gamma + lambda int_0^t m` in case A and the
    /// constant `gamma` in case B.
    pub fn gap(&self, t: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            SolutionKind::CaseA(_) => {
                let a = self.constants.a;
                let (c, s) = oscillator_basis(self.s, t);
                (-a * t).exp() * (p.gamma * c + (p.lambda * p.m0 + a * p.gamma) * s)
            }
            SolutionKind::CaseB => p.gamma,
        }
    }

    pub fn price(&self, t: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            SolutionKind::CaseA(_) => p.p0 - p.gamma + self.gap(t),
            SolutionKind::CaseB => price_b_unchecked(p, 2.0 * self.constants.a, t),
        }
    }

    pub fn pf(&self, t: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            SolutionKind::CaseA(_) => p.p0 - p.gamma,
            SolutionKind::CaseB => self.price(t) - p.gamma,
        }
    }
}

pub fn m_case_a(t: f64, params: &ModelParams) -> Result<f64, AnalyticError> {
    Ok(ClosedFormSolution::case_a(params)?.m(t))
}

pub fn price_case_a(t: f64, params: &ModelParams) -> Result<f64, AnalyticError> {
    Ok(ClosedFormSolution::case_a(params)?.price(t))
}

pub fn m_case_b(t: f64, params: &ModelParams) -> Result<f64, AnalyticError> {
    Ok(ClosedFormSolution::case_b(params)?.m(t))
}

/// Refuses outside the band: there the population freezes and the linear
/// law is replaced by [`freeze_prediction`].
pub fn price_case_b(t: f64, params: &ModelParams) -> Result<f64, AnalyticError> {
    params.require_analytic()?;
    let band = params.validity_band();
    if params.gamma.abs() > band {
        return Err(AnalyticError::OutsideBand {
            gamma: params.gamma,
            band,
        });
    }
    Ok(price_b_unchecked(params, 1.0 - params.kappa / params.theta, t))
}

pub fn m_star(params: &ModelParams) -> Result<f64, AnalyticError> {
    params.require_analytic()?;
    Ok(m_star_unchecked(params))
}

fn m_star_unchecked(p: &ModelParams) -> f64 {
    -p.gamma / (p.theta - p.kappa)
}

fn price_b_unchecked(p: &ModelParams, rate: f64, t: f64) -> f64 {
    let ms = m_star_unchecked(p);
    let scale = p.lambda * p.theta / (p.theta - p.kappa);
    p.p0 + scale * (p.m0 - ms) * -(-rate * t).exp_m1() + p.lambda * ms * t
}

/// Case B with the all-buy / all-sell absorbing state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreezePrediction {
    pub t_dstar: Option<f64>,
    /// Frozen direction, `sign(-gamma)` (0 when `gamma = 0`).
    pub sign: f64,
    /// `m` at the crossover, when there is one.
    pub m_dstar: Option<f64>,
    /// Long-time limit of `m`: the frozen direction, or `m*` without a
    /// freeze.
    pub limit: f64,
    #[serde(skip)]
    params: ModelParams,
}

impl FreezePrediction {
    pub fn frozen(&self) -> bool {
        self.t_dstar.is_some()
    }

    fn linear_m(&self, t: f64) -> f64 {
        let p = &self.params;
        let ms = m_star_unchecked(p);
        (p.m0 - ms) * (-(1.0 - p.kappa / p.theta) * t).exp() + ms
    }

    pub fn m(&self, t: f64) -> f64 {
        match (self.t_dstar, self.m_dstar) {
            (Some(td), Some(md)) if t > td => self.sign + (md - self.sign) * (-(t - td)).exp(),
            _ => self.linear_m(t),
        }
    }

    pub fn price(&self, t: f64) -> f64 {
        let p = &self.params;
        let rate = 1.0 - p.kappa / p.theta;
        match (self.t_dstar, self.m_dstar) {
            (Some(td), Some(md)) if t > td => {
                let tau = t - td;
                price_b_unchecked(p, rate, td) + p.lambda * (self.sign * tau + (md - self.sign) * -(-tau).exp_m1())
            }
            _ => price_b_unchecked(p, rate, t),
        }
    }

    pub fn pf(&self, t: f64) -> f64 {
        self.price(t) - self.params.gamma
    }
}

/// Crossover into the frozen state: the first `t >= 0` at which the social
/// term alone overwhelms the widest noise draw, `kappa m - gamma >= theta`
/// (all buy) or `<= -theta` (all sell). Before it the linear case-B law
/// holds; afterwards every decision is deterministic and `m` relaxes to
/// `+-1` at unit rate.
pub fn freeze_prediction(params: &ModelParams) -> Result<FreezePrediction, AnalyticError> {
    params.require_analytic()?;
    let p = params;
    let ms = m_star_unchecked(p);
    let rate = 1.0 - p.kappa / p.theta;
    let sign = if p.gamma < 0.0 {
        1.0
    } else if p.gamma > 0.0 {
        -1.0
    } else {
        0.0
    };

    let crossing = |thr: f64, buy: bool| -> Option<f64> {
        let reached = |m: f64| if buy { m >= thr } else { m <= thr };
        if reached(p.m0) {
            Some(0.0)
        } else if (buy && ms > thr) || (!buy && ms < thr) {
            Some(((p.m0 - ms) / (thr - ms)).ln() / rate)
        } else {
            None
        }
    };
    let (buy, sell) = if p.kappa == 0.0 {
        (
            (-p.gamma >= p.theta).then_some(0.0),
            (-p.gamma <= -p.theta).then_some(0.0),
        )
    } else {
        (
            crossing((p.theta + p.gamma) / p.kappa, true),
            crossing((p.gamma - p.theta) / p.kappa, false),
        )
    };
    let (t_dstar, dir) = match (buy, sell) {
        (Some(tb), Some(ts)) if ts < tb => (Some(ts), -1.0),
        (Some(tb), _) => (Some(tb), 1.0),
        (None, Some(ts)) => (Some(ts), -1.0),
        (None, None) => (None, sign),
    };
    let mut pred = FreezePrediction {
        t_dstar,
        sign: dir,
        m_dstar: None,
        limit: if t_dstar.is_some() { dir } else { ms },
        params: *p,
    };
    pred.m_dstar = t_dstar.map(|t| pred.linear_m(t));
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lambda: f64, theta: f64, kappa: f64, gamma: f64, m0: f64) -> ModelParams {
        ModelParams {
            lambda,
            theta,
            kappa,
            gamma,
            p0: 0.3,
            m0,
            n_agents: 100,
        }
    }

    fn freezing_market() -> ModelParams {
        ModelParams {
            p0: 0.0,
            ..p(1.0, 1.0, 0.5, -0.75, 0.0)
        }
    }

    /// Independent fixed-step RK4 on the second-order equation, written
    /// here without reference to the module's basis functions.
    fn rk4_case_a(q: &ModelParams, t_end: f64, dt: f64) -> f64 {
        let damp = 1.0 - q.kappa / q.theta;
        let stiff = q.lambda / q.theta;
        let f = |y: f64, v: f64| (v, -damp * v - stiff * y);
        let (mut y, mut v) = (q.m0, -damp * q.m0 - q.gamma / q.theta);
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            let k1 = f(y, v);
            let k2 = f(y + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
            let k3 = f(y + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
            let k4 = f(y + dt * k3.0, v + dt * k3.1);
            y += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        y
    }

    #[test]
    fn zero_solution() {
        let q = p(0.4, 1.0, 0.2, 0.0, 0.0);
        for t in [0.0, 1.0, 7.5] {
            assert_eq!(m_case_a(t, &q).unwrap(), 0.0);
            assert_eq!(price_case_a(t, &q).unwrap(), q.p0);
        }
    }

    #[test]
    fn nearly_undamped_oscillation() {
        let q = p(0.5, 1.0, 0.999, 0.0, 0.5);
        assert_eq!(m_case_a(0.0, &q).unwrap(), 0.5);
        let b = (0.5 - 0.0005f64 * 0.0005).sqrt();
        for t in [0.3f64, 2.0, 9.0] {
            let want = 0.5 * (-0.0005 * t).exp() * ((b * t).cos() - 0.0005 / b * (b * t).sin());
            assert!((m_case_a(t, &q).unwrap() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn overdamped_value_matches_rk4() {
        // Frozen from the RK4 oracle above at dt = 1e-5 (an independent
        // DOP853 run at rtol 1e-13 gives 0.10985962518992061).
        const M_AT_1: f64 = 0.109_859_625_189_930_49;
        let q = p(0.09, 1.0, 0.0, 0.1, 0.5);
        assert!((rk4_case_a(&q, 1.0, 1e-5) - M_AT_1).abs() < 1e-12);
        assert!((m_case_a(1.0, &q).unwrap() - M_AT_1).abs() < 1e-8);
    }

    #[test]
    fn price_value_matches_quadrature() {
        // Adaptive quadrature of an independently integrated m on [0, 2]:
        // P(2) = p0 + 0.09 * int, frozen.
        const P_AT_2: f64 = 0.326_796_516_016_675_2;
        let q = p(0.09, 1.0, 0.0, 0.1, 0.5);
        let sol = ClosedFormSolution::case_a(&q).unwrap();
        let quad = crate::oracle::adaptive_simpson(&|t| sol.m(t), 0.0, 2.0, 1e-13);
        assert!((q.p0 + q.lambda * quad - P_AT_2).abs() < 1e-11);
        assert!((price_case_a(2.0, &q).unwrap() - P_AT_2).abs() < 1e-8);
    }

    #[test]
    fn undamped_price_is_a_sine() {
        let q = p(0.5, 1.0, 1.0, 0.0, 0.5);
        let sol = ClosedFormSolution::case_a_formal(&q);
        let b = 0.5f64.sqrt();
        for t in [0.0, 1.0, 4.0, 20.0] {
            let want = q.p0 + q.lambda * q.m0 / b * (b * t).sin();
            assert!((sol.price(t) - want).abs() < 1e-13);
        }
        assert!(ClosedFormSolution::case_a(&q).is_err());
    }

    #[test]
    fn critical_line_is_continuous() {
        // D = 0 exactly and D = +-1e-8 must give (nearly) the same curve.
        let base = p(0.25, 1.0, 0.0, 0.05, 0.4);
        let exact = ClosedFormSolution::case_a(&base).unwrap();
        assert_eq!(exact.regime(), Some(Regime::Critical));
        for eps in [1e-8, -1e-8, 1e-3] {
            let q = ModelParams {
                lambda: 0.25 * (1.0 + eps),
                ..base
            };
            let sol = ClosedFormSolution::case_a(&q).unwrap();
            for t in [0.5, 3.0, 12.0] {
                let rel = (sol.m(t) - exact.m(t)).abs();
                assert!(rel < 2.0 * eps.abs(), "eps {eps} t {t} diff {rel}");
            }
        }
    }

    #[test]
    fn case_b_examples() {
        let q = p(1.0, 1.0, 0.5, 0.0, 0.5);
        assert!((m_case_b(2.0, &q).unwrap() - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        let fixed = p(1.0, 1.0, 0.5, -0.25, 0.5);
        assert_eq!(m_star(&fixed).unwrap(), 0.5);
        assert_eq!(m_case_b(3.0, &fixed).unwrap(), 0.5);
        assert_eq!(price_case_b(2.0, &fixed).unwrap(), fixed.p0 + 2.0 * 0.5);
        let q = ModelParams {
            p0: 0.0,
            ..p(1.0, 1.0, 0.5, -0.25, 0.0)
        };
        assert!((price_case_b(2.0, &q).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((m_case_b(1.0, &freezing_market()).unwrap() - 1.5 * (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert_eq!(m_star(&freezing_market()).unwrap(), 1.5);
        assert!(matches!(
            price_case_b(1.0, &freezing_market()),
            Err(AnalyticError::OutsideBand { .. })
        ));
        assert_eq!(m_star(&p(1.0, 1.0, 0.3, 0.0, 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn freeze_crossover_and_relaxation() {
        let f = freeze_prediction(&freezing_market()).unwrap();
        let td = f.t_dstar.unwrap();
        assert!((td - 2.0 * 1.5f64.ln()).abs() < 1e-15);
        assert!((td - 0.810_930_216).abs() < 1e-9);
        assert_eq!(f.sign, 1.0);
        assert_eq!(f.limit, 1.0);
        for t in [1.0, 3.0, 8.0] {
            let want = 1.0 - 0.5 * (-(t - td)).exp();
            assert!((f.m(t) - want).abs() < 1e-14);
        }
        assert!((f.m(td) - f.m(td + 1e-13)).abs() < 1e-12);
        assert!((f.price(td) - f.price(td + 1e-13)).abs() < 1e-12);
    }

    #[test]
    fn no_freeze_cases() {
        let f = freeze_prediction(&p(1.0, 1.0, 0.5, -0.25, 0.2)).unwrap();
        assert_eq!(f.t_dstar, None);
        assert_eq!(f.limit, 0.5);
        assert_eq!(f.m(2.0), m_case_b(2.0, &p(1.0, 1.0, 0.5, -0.25, 0.2)).unwrap());
        let f = freeze_prediction(&p(1.0, 1.0, 0.0, 0.9, 0.2)).unwrap();
        assert_eq!(f.t_dstar, None);
        let f = freeze_prediction(&p(1.0, 1.0, 0.0, -1.0, 0.2)).unwrap();
        assert_eq!(f.t_dstar, Some(0.0));
        assert_eq!(f.sign, 1.0);
    }

    proptest! {
        #[test]
        fn basis_derivatives(s in -4.0f64..4.0, t in 0.0f64..5.0) {
            let h = 1e-5;
            let (c, sv) = oscillator_basis(s, t);
            let (cp, sp) = oscillator_basis(s, t + h);
            let (cm, sm) = oscillator_basis(s, (t - h).max(0.0));
            let hh = t + h - (t - h).max(0.0);
            prop_assert!(((cp - cm) / hh - s * sv).abs() < 1e-6 * (1.0 + c.abs()));
            prop_assert!(((sp - sm) / hh - c).abs() < 1e-6 * (1.0 + c.abs()));
        }

        #[test]
        fn case_a_invariants(theta in 0.2f64..3.0, kr in 0.0f64..0.95, lr in 0.01f64..2.0,
                             gr in -0.9f64..0.9, m0 in -1.0f64..1.0, t in 0.0f64..10.0) {
            let q = p(lr * theta, theta, kr * theta, gr * theta * (1.0 - kr), m0);
            let sol = ClosedFormSolution::case_a(&q).unwrap();
            prop_assert_eq!(sol.m(0.0), m0);
            prop_assert!((sol.price(0.0) - q.p0).abs() < 1e-14 * (1.0 + q.p0.abs() + q.gamma.abs()));
            let h = 1e-5;
            let dp = (sol.price(t + h) - sol.price((t - h).max(0.0))) / (t + h - (t - h).max(0.0));
            prop_assert!((dp - q.lambda * sol.m(t)).abs() < 1e-6);
            let dm = (sol.m(t + h) - sol.m((t - h).max(0.0))) / (t + h - (t - h).max(0.0));
            prop_assert!((dm - sol.dm(t)).abs() < 1e-6);
            // gap identity: gamma + lambda int m = -theta (m' + 2a m)
            let a = sol.constants.a;
            prop_assert!((sol.gap(t) + q.theta * (sol.dm(t) + 2.0 * a * sol.m(t))).abs() < 1e-10);
        }

        #[test]
        fn case_b_relaxes_exactly(theta in 0.2f64..3.0, kr in 0.0f64..0.95, gr in -0.9f64..0.9,
                                  m0 in -1.0f64..1.0, t in 0.0f64..20.0) {
            let q = p(0.7, theta, kr * theta, gr * theta * (1.0 - kr), m0);
            let ms = m_star(&q).unwrap();
            let m = m_case_b(t, &q).unwrap();
            let want = (m0 - ms).abs() * (-(1.0 - q.kappa / q.theta) * t).exp();
            prop_assert!(((m - ms).abs() - want).abs() < 1e-14);
            let h = 1e-5;
            let dp = (price_case_b(t + h, &q).unwrap() - price_case_b((t - h).max(0.0), &q).unwrap())
                / (t + h - (t - h).max(0.0));
            prop_assert!((dp - q.lambda * m).abs() < 1e-6);
        }

        #[test]
        fn freeze_is_continuous(kr in 0.05f64..0.95, g in -3.0f64..3.0, m0 in -1.0f64..1.0) {
            let q = p(1.0, 1.0, kr, g, m0);
            let f = freeze_prediction(&q).unwrap();
            if let Some(td) = f.t_dstar {
                prop_assert!((f.m(td) - f.m(td + 1e-14)).abs() < 1e-12);
                prop_assert!((f.price(td) - f.price(td + 1e-14)).abs() < 1e-12);
                prop_assert_eq!(f.limit, f.sign);
                let want = if g < 0.0 { 1.0 } else { -1.0 };
                prop_assert_eq!(f.sign, want);
                prop_assert!((f.m(td + 60.0) - f.sign).abs() < 1e-20_f64.max(2.0 * (-60.0f64).exp()));
            }
        }
    }
}
