//! Brute-force numerical ground truth for the closed forms.
//!
//! Nothing here reuses the analytic module: the integrators read the raw
//! parameters and step the equations of motion directly, so agreement between
//! the two is a genuine cross-check.

use thiserror::Error;

use crate::model::{FundamentalMode, ModelError, ModelParams};

/// Largest step the integrators accept.
pub const MAX_DT: f64 = 1e-3;

/// Default plateau tolerance for [`count_extrema`], in units of m.
pub const DEFAULT_PLATEAU_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {0} must lie in (0, 1e-3]")]
    BadStep(f64),
    #[error("horizon {0} must be non-negative and finite")]
    BadHorizon(f64),
    #[error("grid spacing must be positive and values finite")]
    BadGrid,
    #[error("series are on different grids")]
    GridMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl GridSeries {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self, OracleError> {
        if !(dt > 0.0) || !t0.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::BadGrid);
        }
        Ok(GridSeries { t0, dt, values })
    }

    /// Sample `f` at `t0 + k dt`, `k = 0..len`.
    pub fn sample(t0: f64, dt: f64, len: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..len).map(|k| f(t0 + k as f64 * dt)).collect();
        GridSeries { t0, dt, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }
}

fn steps_for(t_max: f64, dt: f64) -> Result<usize, OracleError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(OracleError::BadStep(dt));
    }
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(OracleError::BadHorizon(t_max));
    }
    Ok((t_max / dt).round() as usize)
}

/// Classical RK4 on the mean equation of motion: second order in case A,
/// first order in case B.
pub fn integrate_ode(
    params: &ModelParams,
    mode: &FundamentalMode,
    t_max: f64,
    dt: f64,
) -> Result<GridSeries, OracleError> {
    params.require_analytic()?;
    let steps = steps_for(t_max, dt)?;
    let damp = 1.0 - params.kappa / params.theta;
    let stiff = params.lambda / params.theta;
    let drive = params.gamma / params.theta;
    let mut values = Vec::with_capacity(steps + 1);
    match mode {
        FundamentalMode::ConstantPf { .. } => {
            let f = |y: f64, v: f64| (v, -damp * v - stiff * y);
            let (mut y, mut v) = (params.m0, -damp * params.m0 - drive);
            values.push(y);
            for _ in 0..steps {
                let k1 = f(y, v);
                let k2 = f(y + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
                let k3 = f(y + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
                let k4 = f(y + dt * k3.0, v + dt * k3.1);
                y += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                values.push(y);
            }
        }
        FundamentalMode::FollowPrice { .. } => {
            let f = |y: f64| -damp * y - drive;
            let mut y = params.m0;
            values.push(y);
            for _ in 0..steps {
                let k1 = f(y);
                let k2 = f(y + 0.5 * dt * k1);
                let k3 = f(y + 0.5 * dt * k2);
                let k4 = f(y + dt * k3);
                y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                values.push(y);
            }
        }
    }
    GridSeries::new(0.0, dt, values)
}

/// The integro-differential form before reduction to an oscillator:
/// `theta f' = -(theta - kappa) f - (P - P_f)` with `P = p0 + lambda I`,
/// `I' = f`. Stepped with the implicit trapezoid rule on `(f, I)`, which is
/// a running trapezoid for the integral and exact for this linear system up
/// to O(dt^2).
pub fn integrate_integro(
    params: &ModelParams,
    mode: &FundamentalMode,
    t_max: f64,
    dt: f64,
) -> Result<GridSeries, OracleError> {
    params.require_analytic()?;
    let steps = steps_for(t_max, dt)?;
    let th = params.theta;
    // f' = alpha f + beta I + delta
    let alpha = -(1.0 - params.kappa / th);
    let (beta, delta) = match *mode {
        FundamentalMode::ConstantPf { pf0 } => (-params.lambda / th, -(params.p0 - pf0) / th),
        FundamentalMode::FollowPrice { gamma } => (0.0, -gamma / th),
    };
    let h = dt;
    let denom = 1.0 - 0.5 * h * alpha - 0.25 * h * h * beta;
    let (mut f, mut i) = (params.m0, 0.0);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(f);
    for _ in 0..steps {
        let f1 = (f + 0.5 * h * (alpha * f + 2.0 * beta * i + 0.5 * h * beta * f + 2.0 * delta)) / denom;
        i += 0.5 * h * (f + f1);
        f = f1;
        values.push(f);
    }
    GridSeries::new(0.0, dt, values)
}

/// `P = p0 + lambda * cumulative trapezoid of m`.
pub fn quadrature_price(series: &GridSeries, params: &ModelParams) -> GridSeries {
    let mut values = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (k, &m) in series.values.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * series.dt * (series.values[k - 1] + m);
        }
        values.push(params.p0 + params.lambda * acc);
    }
    GridSeries {
        t0: series.t0,
        dt: series.dt,
        values,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extrema {
    pub count: usize,
    pub locations: Vec<f64>,
}

/// Interior strict extrema, found as sign changes of the first differences.
/// Differences of magnitude `<= tol` are treated as flat, so a plateau
/// between a rise and a fall counts once, located at its midpoint.
pub fn count_extrema(series: &GridSeries, tol: f64) -> Extrema {
    let v = &series.values;
    let mut locations = Vec::new();
    let mut last_sign = 0i8;
    let mut last_end = 0usize;
    for k in 1..v.len() {
        let d = v[k] - v[k - 1];
        if d.abs() <= tol {
            continue;
        }
        let sign = if d > 0.0 { 1 } else { -1 };
        if last_sign != 0 && sign != last_sign {
            locations.push(0.5 * (series.time(last_end) + series.time(k - 1)));
        }
        last_sign = sign;
        last_end = k;
    }
    Extrema {
        count: locations.len(),
        locations,
    }
}

pub fn max_abs_diff(a: &GridSeries, b: &GridSeries) -> Result<f64, OracleError> {
    let same_grid =
        a.len() == b.len() && (a.t0 - b.t0).abs() <= 1e-12 * (1.0 + a.t0.abs()) && (a.dt - b.dt).abs() <= 1e-12 * a.dt;
    if !same_grid {
        return Err(OracleError::GridMismatch);
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Plain bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if (fm > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ClosedFormSolution;
    use proptest::prelude::*;

    fn p(lambda: f64, kappa: f64, gamma: f64, m0: f64) -> ModelParams {
        ModelParams {
            lambda,
            theta: 1.0,
            kappa,
            gamma,
            p0: 0.2,
            m0,
            n_agents: 10,
        }
    }

    #[test]
    fn zero_stays_zero() {
        let q = p(0.4, 0.2, 0.0, 0.0);
        let s = integrate_ode(&q, &FundamentalMode::constant(&q), 5.0, 1e-3).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.len(), 5001);
    }

    #[test]
    fn rejects_coarse_steps_and_strong_herding() {
        let q = p(0.4, 0.2, 0.0, 0.1);
        let mode = FundamentalMode::constant(&q);
        assert!(matches!(
            integrate_ode(&q, &mode, 1.0, 2e-3),
            Err(OracleError::BadStep(_))
        ));
        let strong = p(0.4, 1.0, 0.0, 0.1);
        assert!(matches!(
            integrate_ode(&strong, &mode, 1.0, 1e-3),
            Err(OracleError::Model(_))
        ));
    }

    #[test]
    fn fourth_order_convergence() {
        let q = p(8.0, 0.3, 0.15, 0.6);
        let sol = ClosedFormSolution::case_a(&q).unwrap();
        let mode = FundamentalMode::constant(&q);
        let err = |dt: f64| {
            let s = integrate_ode(&q, &mode, 10.0, dt).unwrap();
            max_abs_diff(&s, &GridSeries::sample(0.0, dt, s.len(), |t| sol.m(t))).unwrap()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn case_b_matches_exponential_law() {
        let q = p(1.0, 0.5, -0.25, 0.1);
        let sol = ClosedFormSolution::case_b(&q).unwrap();
        let s = integrate_ode(&q, &FundamentalMode::follow(&q), 10.0, 1e-4).unwrap();
        let exact = GridSeries::sample(0.0, 1e-4, s.len(), |t| sol.m(t));
        assert!(max_abs_diff(&s, &exact).unwrap() < 1e-8);
    }

    #[test]
    fn integro_route_agrees_with_second_order_route() {
        for q in [p(0.09, 0.0, 0.1, 0.5), p(0.25, 0.0, -0.2, 0.3), p(2.0, 0.6, 0.05, -0.8)] {
            let mode = FundamentalMode::constant(&q);
            let a = integrate_ode(&q, &mode, 10.0, 1e-4).unwrap();
            let b = integrate_integro(&q, &mode, 10.0, 1e-4).unwrap();
            assert!(max_abs_diff(&a, &b).unwrap() < 1e-7);
        }
    }

    #[test]
    fn quadrature_price_basics() {
        let q = p(0.5, 0.0, 0.0, 0.0);
        let ones = GridSeries::new(0.0, 0.01, vec![0.4; 101]).unwrap();
        let pr = quadrature_price(&ones, &q);
        for (k, v) in pr.values.iter().enumerate() {
            assert!((v - (0.2 + 0.5 * 0.4 * 0.01 * k as f64)).abs() < 1e-15);
        }
        let zeros = GridSeries::new(0.0, 0.01, vec![0.0; 11]).unwrap();
        assert!(quadrature_price(&zeros, &q).values.iter().all(|&v| v == 0.2));
    }

    #[test]
    fn quadrature_matches_underdamped_price() {
        let q = p(0.8, 0.4, 0.1, 0.5);
        let sol = ClosedFormSolution::case_a(&q).unwrap();
        let m = GridSeries::sample(0.0, 1e-4, 100_001, |t| sol.m(t));
        let exact = GridSeries::sample(0.0, 1e-4, 100_001, |t| sol.price(t));
        assert!(max_abs_diff(&quadrature_price(&m, &q), &exact).unwrap() < 1e-8);
    }

    #[test]
    fn extrema_counting() {
        let b = 0.5f64.sqrt();
        let dt = 1e-3;
        let len = (3.0 * std::f64::consts::PI / b / dt) as usize;
        let cos = GridSeries::sample(0.0, dt, len, |t| (b * t).cos());
        let e = count_extrema(&cos, DEFAULT_PLATEAU_TOL);
        assert_eq!(e.count, 2);
        // On [0, 3pi/b] itself the trough at 3pi/b is a boundary point; once
        // the grid runs past it, it becomes the third interior extremum.
        let len = (3.0 * std::f64::consts::PI / b / dt) as usize + 3;
        let e = count_extrema(&GridSeries::sample(0.0, dt, len, |t| (b * t).cos()), 0.0);
        assert_eq!(e.count, 3);
        assert!((e.locations[0] - std::f64::consts::PI / b).abs() < 1e-3);
        let ramp = GridSeries::sample(0.0, 0.1, 50, |t| 2.0 * t);
        assert_eq!(count_extrema(&ramp, 0.0).count, 0);
        let plateau = GridSeries::new(0.0, 1.0, vec![0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        let e = count_extrema(&plateau, 0.0);
        assert_eq!(e.locations, vec![2.0]);
    }

    #[test]
    fn oscillation_gains_one_extremum_per_half_period() {
        let q = p(0.5, 0.99, 0.0, 0.5);
        let mode = FundamentalMode::constant(&q);
        let s = integrate_ode(&q, &mode, 40.0, 1e-3).unwrap();
        let b = (0.5f64 - 0.005 * 0.005).sqrt();
        let half = std::f64::consts::PI / b;
        let e = count_extrema(&s, DEFAULT_PLATEAU_TOL);
        assert_eq!(e.count, (40.0 / half) as usize);
        for w in e.locations.windows(2) {
            assert!((w[1] - w[0] - half).abs() < 3e-3);
        }
    }

    #[test]
    fn max_abs_diff_basics() {
        let a = GridSeries::sample(0.0, 0.5, 10, |t| t.sin());
        assert_eq!(max_abs_diff(&a, &a).unwrap(), 0.0);
        let b = GridSeries::sample(0.0, 0.5, 10, |t| t.sin() + 1e-6);
        assert!((max_abs_diff(&a, &b).unwrap() - 1e-6).abs() < 1e-15);
        let c = GridSeries::sample(0.0, 0.25, 10, |t| t);
        assert!(matches!(max_abs_diff(&a, &c), Err(OracleError::GridMismatch)));
    }

    #[test]
    fn simpson_and_bisect() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-13);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn quadrature_price_differentiates_back(w in 0.2f64..3.0, ph in 0.0f64..6.0) {
            let q = p(0.7, 0.0, 0.0, 0.0);
            let dt = 1e-3;
            let m = GridSeries::sample(0.0, dt, 2001, |t| (w * t + ph).sin());
            let pr = quadrature_price(&m, &q);
            for k in 1..2000 {
                let d = (pr.values[k + 1] - pr.values[k - 1]) / (2.0 * dt);
                prop_assert!((d - q.lambda * m.values[k]).abs() < 10.0 * dt * dt * w * w);
            }
        }
    }
}
