//! CSV writers. Numbers are printed with 17 significant digits so files
//! round-trip exactly and are byte-identical across identical runs.

use std::io::{self, Write};

use crate::ensemble::EnsembleStats;
use crate::simulator::Trajectory;

pub const TRAJECTORY_HEADER: &str = "t,m_bar,price,pf";
pub const ENSEMBLE_HEADER: &str = "t,mean_m,stderr_m";

/// Shortest form for exact grid values, scientific with 17 significant
/// digits otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.16e}")
    }
}

/// Four aligned columns in the trajectory schema; shared by simulated,
/// analytic and oracle curves.
pub fn write_series_csv<W: Write>(mut w: W, times: &[f64], m: &[f64], price: &[f64], pf: &[f64]) -> io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for k in 0..times.len() {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(times[k]),
            fmt_f64(m[k]),
            fmt_f64(price[k]),
            fmt_f64(pf[k])
        )?;
    }
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(w: W, tr: &Trajectory) -> io::Result<()> {
    write_series_csv(w, &tr.times, &tr.m_bar, &tr.price, &tr.pf)
}

pub fn write_ensemble_csv<W: Write>(mut w: W, s: &EnsembleStats) -> io::Result<()> {
    writeln!(w, "{ENSEMBLE_HEADER}")?;
    for k in 0..s.times.len() {
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(s.times[k]),
            fmt_f64(s.mean_m[k]),
            fmt_f64(s.stderr_m[k])
        )?;
    }
    Ok(())
}

/// Sample a curve `t -> (m, P, P_f)` on `0, dt, ..., t_max` in the
/// trajectory schema.
pub fn write_curve_csv<W: Write>(w: W, t_max: f64, dt: f64, curve: impl Fn(f64) -> (f64, f64, f64)) -> io::Result<()> {
    let last = (t_max / dt * (1.0 + 1e-12)).floor() as usize;
    let times: Vec<f64> = (0..=last).map(|k| k as f64 * dt).collect();
    let (mut m, mut p, mut f) = (Vec::new(), Vec::new(), Vec::new());
    for &t in &times {
        let (a, b, c) = curve(t);
        m.push(a);
        p.push(b);
        f.push(c);
    }
    write_series_csv(w, &times, &m, &p, &f)
}
