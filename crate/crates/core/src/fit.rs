//! Small least-squares fits used to read frequencies and decay rates off
//! noisy simulated paths.

/// `y ~ offset + A cos(w t) + B sin(w t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidFit {
    pub omega: f64,
    pub offset: f64,
    pub cos_coef: f64,
    pub sin_coef: f64,
    pub rms_residual: f64,
}

impl SinusoidFit {
    pub fn amplitude(&self) -> f64 {
        self.cos_coef.hypot(self.sin_coef)
    }
}

/// `y ~ A e^{-r t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub amplitude: f64,
    pub rms_residual: f64,
}

/// Solve the 3x3 normal equations for fixed `omega`; returns coefficients
/// and the residual sum of squares.
fn linear_sinusoid(t: &[f64], y: &[f64], omega: f64) -> ([f64; 3], f64) {
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&ti, &yi) in t.iter().zip(y) {
        let row = [1.0, (omega * ti).cos(), (omega * ti).sin()];
        for r in 0..3 {
            aty[r] += row[r] * yi;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let coef = solve3(ata, aty).unwrap_or([0.0; 3]);
    let rss = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let f = coef[0] + coef[1] * (omega * ti).cos() + coef[2] * (omega * ti).sin();
            (yi - f).powi(2)
        })
        .sum();
    (coef, rss)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot_row = a[col];
        for r in col + 1..3 {
            let f = a[r][col] / pivot_row[col];
            for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Best single-frequency fit with `omega` in `[omega_lo, omega_hi]`: a grid
/// search over `grid` frequencies, refined by golden section around the best.
pub fn fit_sinusoid(t: &[f64], y: &[f64], omega_lo: f64, omega_hi: f64) -> SinusoidFit {
    assert_eq!(t.len(), y.len());
    assert!(omega_hi > omega_lo && omega_lo >= 0.0);
    const GRID: usize = 400;
    let step = (omega_hi - omega_lo) / GRID as f64;
    let rss = |w: f64| linear_sinusoid(t, y, w).1;
    let best = (0..=GRID)
        .map(|k| omega_lo + k as f64 * step)
        .min_by(|&a, &b| rss(a).total_cmp(&rss(b)))
        .unwrap();
    let lo = (best - step).max(omega_lo);
    let hi = (best + step).min(omega_hi);
    let omega = golden_min(rss, lo, hi, 1e-10);
    let (coef, rss_final) = linear_sinusoid(t, y, omega);
    SinusoidFit {
        omega,
        offset: coef[0],
        cos_coef: coef[1],
        sin_coef: coef[2],
        rms_residual: (rss_final / t.len().max(1) as f64).sqrt(),
    }
}

/// Least-squares `A e^{-rt}`: `A` is solved in closed form for each `r`, and
/// `r` by golden section on `[r_lo, r_hi]`.
pub fn fit_exponential_decay(t: &[f64], y: &[f64], r_lo: f64, r_hi: f64) -> DecayFit {
    assert_eq!(t.len(), y.len());
    let amp = |r: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let e = (-r * ti).exp();
            num += e * yi;
            den += e * e;
        }
        num / den
    };
    let rss = |r: f64| {
        let a = amp(r);
        t.iter()
            .zip(y)
            .map(|(&ti, &yi)| (yi - a * (-r * ti).exp()).powi(2))
            .sum::<f64>()
    };
    let rate = golden_min(rss, r_lo, r_hi, 1e-10);
    DecayFit {
        rate,
        amplitude: amp(rate),
        rms_residual: (rss(rate) / t.len().max(1) as f64).sqrt(),
    }
}

/// Strict sign changes, skipping exact zeros.
pub fn sign_changes(y: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut n = 0;
    for &v in y {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            n += 1;
        }
        last = v;
    }
    n
}

pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len().max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_clean_sinusoid() {
        let t: Vec<f64> = (0..3001).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|&s| 0.1 + 0.5 * (0.75 * s + 0.3).cos()).collect();
        let f = fit_sinusoid(&t, &y, 0.2, 2.0);
        assert!((f.omega - 0.75).abs() < 1e-7);
        assert!((f.amplitude() - 0.5).abs() < 1e-6);
        assert!((f.offset - 0.1).abs() < 1e-6);
    }

    #[test]
    fn recovers_a_decay() {
        let t: Vec<f64> = (0..501).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|&s| 0.4 * (-1.3 * s).exp()).collect();
        let f = fit_exponential_decay(&t, &y, 0.1, 5.0);
        assert!((f.rate - 1.3).abs() < 1e-7);
        assert!((f.amplitude - 0.4).abs() < 1e-7);
    }

    #[test]
    fn counts_sign_changes() {
        assert_eq!(sign_changes(&[1.0, 0.0, -1.0, -2.0, 3.0, 0.0, 0.0, 1.0]), 2);
        assert_eq!(sign_changes(&[]), 0);
        assert_eq!(rms_diff(&[1.0, 1.0], &[0.0, 2.0]), 1.0);
    }
}
