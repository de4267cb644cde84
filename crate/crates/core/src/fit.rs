//! Least-squares fit of `y = a e^(b x) + c e^(d x)`.
//!
//! Variable projection: for fixed rates the amplitudes solve a 2x2 linear
//! least-squares problem, so only `(b, d)` is searched: a coarse grid first,
//! then pattern search from the best grid cells. Abscissae are mapped to
//! `[-1, 1]` internally to keep the exponentials well scaled.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Bound on the rates in the rescaled coordinate.
const RATE_BOUND: f64 = 12.0;
const GRID: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleExpFit {
    mid: f64,
    half: f64,
    /// Amplitudes and rates in the rescaled coordinate.
    amps: (f64, f64),
    rates: (f64, f64),
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub y: f64,
    /// Minimiser sits on an end of the searched range.
    pub at_boundary: bool,
}

impl DoubleExpFit {
    fn u(&self, x: f64) -> f64 {
        (x - self.mid) / self.half
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = self.u(x);
        self.amps.0 * math::exp(self.rates.0 * u) + self.amps.1 * math::exp(self.rates.1 * u)
    }

    /// `(a, b, c, d)` in the original coordinate, with `b <= d`.
    pub fn coefficients(&self) -> (f64, f64, f64, f64) {
        let b = self.rates.0 / self.half;
        let d = self.rates.1 / self.half;
        let a = self.amps.0 * math::exp(-b * self.mid);
        let c = self.amps.1 * math::exp(-d * self.mid);
        (a, b, c, d)
    }

    /// Minimiser of the fitted curve over `[lo, hi]`.
    pub fn argmin(&self, lo: f64, hi: f64) -> Minimum {
        const N: usize = 2000;
        let at = |i: usize| lo + (hi - lo) * i as f64 / N as f64;
        let mut best = 0;
        let mut best_y = f64::INFINITY;
        for i in 0..=N {
            let y = self.eval(at(i));
            if y < best_y {
                best = i;
                best_y = y;
            }
        }
        // golden-section polish inside the bracketing cells
        let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(N)));
        let g = 0.5 * (math::sqrt(5.0) - 1.0);
        for _ in 0..80 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if self.eval(x1) <= self.eval(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let mut x = 0.5 * (a + b);
        let mut y = self.eval(x);
        if best_y < y {
            x = at(best);
            y = best_y;
        }
        let tol = 1e-6 * (hi - lo).abs().max(1e-300);
        Minimum {
            x,
            y,
            at_boundary: (x - lo).abs() <= tol || (hi - x).abs() <= tol,
        }
    }
}

/// Best amplitudes for fixed rates and the resulting sum of squared errors.
fn project(us: &[f64], ys: &[f64], b: f64, d: f64) -> ((f64, f64), f64) {
    let (mut pp, mut pq, mut qq, mut py, mut qy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let cols: Vec<(f64, f64)> = us.iter().map(|&u| (math::exp(b * u), math::exp(d * u))).collect();
    for (&(p, q), &y) in cols.iter().zip(ys) {
        pp += p * p;
        pq += p * q;
        qq += q * q;
        py += p * y;
        qy += q * y;
    }
    let det = pp * qq - pq * pq;
    let amps = if det > 1e-12 * pp * qq && det.is_finite() {
        ((qq * py - pq * qy) / det, (pp * qy - pq * py) / det)
    } else if pp >= qq {
        // collinear columns: a single exponential carries the fit
        (py / pp, 0.0)
    } else {
        (0.0, qy / qq)
    };
    let sse = cols
        .iter()
        .zip(ys)
        .map(|(&(p, q), &y)| {
            let r = amps.0 * p + amps.1 * q - y;
            r * r
        })
        .sum();
    (amps, sse)
}

pub fn fit_double_exponential(xs: &[f64], ys: &[f64]) -> Result<DoubleExpFit> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            op: "fit_double_exponential",
            left: (xs.len(), 1),
            right: (ys.len(), 1),
        });
    }
    if xs.len() < 6 {
        return Err(Error::InvalidArgument("double-exponential fit needs at least 6 points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fit inputs must be finite"));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::InvalidArgument("fit needs at least two distinct abscissae"));
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let us: Vec<f64> = xs.iter().map(|&x| (x - mid) / half).collect();
    let cost = |b: f64, d: f64| {
        let s = project(&us, ys, b, d).1;
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    };

    let spacing = 2.0 * RATE_BOUND / (GRID - 1) as f64;
    let grid = |i: usize| -RATE_BOUND + spacing * i as f64;
    let mut cells = Vec::new();
    for i in 0..GRID {
        for j in i + 1..GRID {
            cells.push((cost(grid(i), grid(j)), grid(i), grid(j)));
        }
    }
    cells.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &(c0, b0, d0) in cells.iter().take(4) {
        let (mut c, mut b, mut d) = (c0, b0, d0);
        let mut step = spacing;
        let dirs = [
            (1.0, 0.0),
            (-1.0, 0.0),
            (0.0, 1.0),
            (0.0, -1.0),
            (1.0, 1.0),
            (-1.0, -1.0),
            (1.0, -1.0),
            (-1.0, 1.0),
        ];
        let limit = 2.0 * RATE_BOUND;
        while step > 1e-10 {
            let mut moved = false;
            for (db, dd) in dirs {
                let (nb, nd) = (b + db * step, d + dd * step);
                if nb.abs() > limit || nd.abs() > limit {
                    continue;
                }
                let nc = cost(nb, nd);
                if nc < c {
                    (c, b, d) = (nc, nb, nd);
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        if c < best.0 {
            best = (c, b, d);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::FitFailed);
    }
    let (_, mut b, mut d) = best;
    if b > d {
        core::mem::swap(&mut b, &mut d);
    }
    let (amps, sse) = project(&us, ys, b, d);
    Ok(DoubleExpFit {
        mid,
        half,
        amps,
        rates: (b, d),
        sse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn recovers_exact_curve() {
        let f = |x: f64| 0.8 * math::exp(-0.9 * x) + 0.05 * math::exp(0.6 * x);
        let xs = linspace(0.0, 8.0, 12);
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let fit = fit_double_exponential(&xs, &ys).unwrap();
        assert!(fit.sse < 1e-14, "{}", fit.sse);
        for x in linspace(0.0, 8.0, 37) {
            assert!((fit.eval(x) - f(x)).abs() < 1e-6);
        }
        let (a, b, c, d) = fit.coefficients();
        assert!((a - 0.8).abs() < 1e-4 && (b + 0.9).abs() < 1e-4, "{a} {b}");
        assert!((c - 0.05).abs() < 1e-4 && (d - 0.6).abs() < 1e-4, "{c} {d}");
        // f' = 0 at x = ln(0.72 / 0.03) / 1.5
        let m = fit.argmin(0.0, 8.0);
        assert!((m.x - (24.0f64).ln() / 1.5).abs() < 1e-4, "{m:?}");
        assert!(!m.at_boundary);
    }

    #[test]
    fn tolerates_noise() {
        let f = |x: f64| math::exp(x - 4.0) + math::exp(-(x - 4.0));
        let mut rng = Rng::new(7);
        let xs: Vec<f64> = (0..30).map(|_| rng.uniform_range(0.0, 8.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x) + 0.01 * rng.normal()).collect();
        let fit = fit_double_exponential(&xs, &ys).unwrap();
        assert!(fit.sse < 30.0 * 1e-4 * 2.0, "{}", fit.sse);
        assert!((fit.argmin(0.0, 8.0).x - 4.0).abs() < 0.05);
    }

    #[test]
    fn monotone_data_minimises_at_boundary() {
        let xs = linspace(0.0, 8.0, 9);
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * math::exp(-0.5 * x) + 0.1).collect();
        let fit = fit_double_exponential(&xs, &ys).unwrap();
        assert!(fit.sse < 1e-12, "{}", fit.sse);
        assert!(fit.argmin(0.0, 8.0).at_boundary);
    }

    #[test]
    fn rejects_bad_input() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(fit_double_exponential(&xs[..5], &[1.0; 5]).is_err());
        assert!(fit_double_exponential(&[1.0; 6], &[1.0; 6]).is_err());
        assert!(fit_double_exponential(&xs, &[0.0; 5]).is_err());
        let mut bad = xs;
        bad[3] = f64::NAN;
        assert!(fit_double_exponential(&bad, &[0.0; 6]).is_err());
    }

    #[test]
    fn recovers_growth_plus_decay() {
        let xs = linspace(-2.0, 2.0, 9);
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * math::exp(-x) + math::exp(0.5 * x)).collect();
        let fit = fit_double_exponential(&xs, &ys).unwrap();
        assert!(fit.sse < 1e-8, "{}", fit.sse);
        let (a, b, c, d) = fit.coefficients();
        for (got, want) in [(a, 2.0), (b, -1.0), (c, 1.0), (d, 0.5)] {
            assert!((got - want).abs() < 1e-4, "{:?}", fit.coefficients());
        }
    }

    #[test]
    fn constant_data_fits_exactly() {
        let xs = linspace(0.0, 8.0, 10);
        let fit = fit_double_exponential(&xs, &[1.25; 10]).unwrap();
        assert!(fit.sse < 1e-24, "{}", fit.sse);
        assert!((fit.eval(3.3) - 1.25).abs() < 1e-12);
    }
}
