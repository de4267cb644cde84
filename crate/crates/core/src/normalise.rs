//! Normalisations `f(G)` of an affinity matrix.
//!
//! Row-wise `L1`/`L2` give every affinity vector unit norm; `avg` rescales so
//! the mean entry is one; `max` so the largest entry is one; `noN` is the
//! identity. `L1` uses the absolute row sum so signed (`IP`, `CS`) affinities
//! are handled; for nonnegative `G` it is the plain row sum.
//!
//! Denominators are guarded with `max(den, 1e-12)`. `avg` divides by
//! `max(|sum G|, 1e-12)`; a non-positive sum is reported by
//! [`is_degenerate`] instead of failing. The `max` gradient flows through the
//! first maximiser in row-major order.

use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::{dot, Matrix};
use crate::EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormKind {
    L1,
    L2,
    Avg,
    Max,
    NoN,
}

impl NormKind {
    pub const ALL: [NormKind; 5] = [Self::L1, Self::L2, Self::Avg, Self::Max, Self::NoN];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::Avg => "avg",
            Self::Max => "max",
            Self::NoN => "noN",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse {
                what: "normalisation",
                input: s.into(),
            })
    }
}

fn check_square(g: &Matrix, op: &'static str) -> Result<()> {
    if g.rows() != g.cols() || g.rows() == 0 {
        return Err(Error::Shape {
            op,
            left: g.shape(),
            right: (g.rows(), g.rows()),
        });
    }
    Ok(())
}

fn row_l1(row: &[f64]) -> f64 {
    row.iter().map(|x| x.abs()).sum()
}

fn row_l2(row: &[f64]) -> f64 {
    math::sqrt(dot(row, row))
}

/// First maximiser in row-major scan order.
fn argmax(g: &Matrix) -> (usize, f64) {
    let mut best = (0, g.as_slice()[0]);
    for (idx, &x) in g.as_slice().iter().enumerate().skip(1) {
        if x > best.1 {
            best = (idx, x);
        }
    }
    best
}

pub fn forward(kind: NormKind, g: &Matrix) -> Result<Matrix> {
    check_square(g, "normalise_forward")?;
    let mut out = g.clone();
    match kind {
        NormKind::L1 | NormKind::L2 => {
            for i in 0..g.rows() {
                let row = out.row_mut(i);
                let den = if kind == NormKind::L1 { row_l1(row) } else { row_l2(row) }.max(EPS);
                for x in row.iter_mut() {
                    *x /= den;
                }
            }
        }
        NormKind::Avg => {
            let b = g.rows() as f64;
            let den = g.as_slice().iter().sum::<f64>().abs().max(EPS);
            let c = b * b / den;
            out.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        }
        NormKind::Max => {
            let den = argmax(g).1.max(EPS);
            out.as_mut_slice().iter_mut().for_each(|x| *x /= den);
        }
        NormKind::NoN => {}
    }
    Ok(out)
}

/// True when a guard replaced the natural denominator somewhere in `g`.
pub fn is_degenerate(kind: NormKind, g: &Matrix) -> bool {
    match kind {
        NormKind::L1 => (0..g.rows()).any(|i| row_l1(g.row(i)) < EPS),
        NormKind::L2 => (0..g.rows()).any(|i| row_l2(g.row(i)) < EPS),
        NormKind::Avg => g.as_slice().iter().sum::<f64>() < EPS,
        NormKind::Max => argmax(g).1 < EPS,
        NormKind::NoN => false,
    }
}

/// Pulls `dL/df(G)` back to `dL/dG`.
pub fn vjp(kind: NormKind, g: &Matrix, dout: &Matrix) -> Result<Matrix> {
    check_square(g, "normalise_vjp")?;
    if dout.shape() != g.shape() {
        return Err(Error::Shape {
            op: "normalise_vjp",
            left: g.shape(),
            right: dout.shape(),
        });
    }
    let mut dg = dout.clone();
    match kind {
        NormKind::L1 => {
            for i in 0..g.rows() {
                let (row, drow) = (g.row(i), dout.row(i));
                let s = row_l1(row);
                if s < EPS {
                    dg.row_mut(i).iter_mut().for_each(|x| *x /= EPS);
                    continue;
                }
                let proj = dot(drow, row) / (s * s);
                for (j, x) in dg.row_mut(i).iter_mut().enumerate() {
                    *x = drow[j] / s - math::sign(row[j]) * proj;
                }
            }
        }
        NormKind::L2 => {
            for i in 0..g.rows() {
                let (row, drow) = (g.row(i), dout.row(i));
                let n = row_l2(row);
                if n < EPS {
                    dg.row_mut(i).iter_mut().for_each(|x| *x /= EPS);
                    continue;
                }
                let proj = dot(drow, row) / (n * n * n);
                for (j, x) in dg.row_mut(i).iter_mut().enumerate() {
                    *x = drow[j] / n - row[j] * proj;
                }
            }
        }
        NormKind::Avg => {
            let b = g.rows() as f64;
            let sum = g.as_slice().iter().sum::<f64>();
            let den = sum.abs();
            if den < EPS {
                let c = b * b / EPS;
                dg.as_mut_slice().iter_mut().for_each(|x| *x *= c);
            } else {
                // d/dG of b^2 G / |s|
                let proj = math::sign(sum) * b * b * dot(dout.as_slice(), g.as_slice()) / (den * den);
                for (x, &d) in dg.as_mut_slice().iter_mut().zip(dout.as_slice()) {
                    *x = b * b * d / den - proj;
                }
            }
        }
        NormKind::Max => {
            let (idx, m) = argmax(g);
            if m < EPS {
                dg.as_mut_slice().iter_mut().for_each(|x| *x /= EPS);
            } else {
                let proj = dot(dout.as_slice(), g.as_slice()) / (m * m);
                dg.as_mut_slice().iter_mut().for_each(|x| *x /= m);
                dg.as_mut_slice()[idx] -= proj;
            }
        }
        NormKind::NoN => {}
    }
    Ok(dg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn closed_form_examples() {
        let l1 = forward(NormKind::L1, &m(&[&[1.0, 3.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(l1, m(&[&[0.25, 0.75], &[0.5, 0.5]]));
        let l2 = forward(NormKind::L2, &m(&[&[3.0, 4.0], &[0.0, 2.0]])).unwrap();
        assert!(close(&l2, &m(&[&[0.6, 0.8], &[0.0, 1.0]]), 1e-15));
        let avg = forward(NormKind::Avg, &Matrix::filled(2, 2, 2.0)).unwrap();
        assert_eq!(avg, Matrix::filled(2, 2, 1.0));
        let max = forward(NormKind::Max, &m(&[&[1.0, 4.0], &[2.0, 0.0]])).unwrap();
        assert_eq!(max, m(&[&[0.25, 1.0], &[0.5, 0.0]]));
        let g = Rng::new(1).gaussian(3, 3, 0.0, 1.0);
        assert_eq!(forward(NormKind::NoN, &g).unwrap(), g);
    }

    #[test]
    fn acronyms_round_trip() {
        for k in NormKind::ALL {
            assert_eq!(k.as_str().parse::<NormKind>().unwrap(), k);
        }
        assert!("AVG".parse::<NormKind>().is_err());
        assert!("non".parse::<NormKind>().is_err());
    }

    #[test]
    fn non_square_rejected() {
        assert!(forward(NormKind::L1, &Matrix::zeros(2, 3)).is_err());
        assert!(vjp(NormKind::L1, &Matrix::zeros(2, 2), &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn identity_vjp_for_non() {
        let mut rng = Rng::new(2);
        let g = rng.gaussian(4, 4, 0.0, 1.0);
        let d = rng.gaussian(4, 4, 0.0, 1.0);
        assert_eq!(vjp(NormKind::NoN, &g, &d).unwrap(), d);
    }

    #[test]
    fn degenerate_inputs_are_guarded_and_flagged() {
        let zero = Matrix::zeros(3, 3);
        for k in NormKind::ALL {
            let out = forward(k, &zero).unwrap();
            assert!(out.is_finite());
            assert!(vjp(k, &zero, &Matrix::filled(3, 3, 1.0)).unwrap().is_finite());
            assert_eq!(is_degenerate(k, &zero), k != NormKind::NoN);
        }
        let negative = Matrix::filled(2, 2, -1.0);
        assert!(is_degenerate(NormKind::Avg, &negative));
        let out = forward(NormKind::Avg, &negative).unwrap();
        assert_eq!(out, Matrix::filled(2, 2, -1.0));
    }

    #[test]
    fn max_ties_pick_first_in_row_major_order() {
        let g = m(&[&[1.0, 3.0], &[3.0, 0.0]]);
        let d = Matrix::filled(2, 2, 1.0);
        let dg = vjp(NormKind::Max, &g, &d).unwrap();
        // sum(d .* G) = 7, max = 3: the first maximiser receives -7/9 extra
        assert!((dg[(0, 1)] - (1.0 / 3.0 - 7.0 / 9.0)).abs() < 1e-15);
        assert!((dg[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    fn fd_check(kind: NormKind, g: &Matrix, d: &Matrix) -> f64 {
        let analytic = vjp(kind, g, d).unwrap();
        let h = 1e-6;
        let mut fd = Matrix::zeros(g.rows(), g.cols());
        for idx in 0..g.as_slice().len() {
            let mut gp = g.clone();
            gp.as_mut_slice()[idx] += h;
            let mut gm = g.clone();
            gm.as_mut_slice()[idx] -= h;
            let fp = forward(kind, &gp).unwrap().frobenius_dot(d).unwrap();
            let fm = forward(kind, &gm).unwrap().frobenius_dot(d).unwrap();
            fd.as_mut_slice()[idx] = (fp - fm) / (2.0 * h);
        }
        analytic.sub(&fd).unwrap().frobenius_norm() / fd.frobenius_norm().max(1e-12)
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let g = rng.gaussian(4, 4, 1.0, 1.0);
            let d = rng.gaussian(4, 4, 0.0, 1.0);
            for k in NormKind::ALL {
                let err = fd_check(k, &g, &d);
                assert!(err < 1e-4, "{k}: relative error {err}");
            }
        }
    }

    #[test]
    fn avg_orthogonal_upstream_leaves_pure_scaling() {
        let mut rng = Rng::new(6);
        let g = rng.gaussian(3, 3, 2.0, 0.5);
        let mut d = rng.gaussian(3, 3, 0.0, 1.0);
        // remove the component of d along G so only the 1/s term survives
        let c = d.frobenius_dot(&g).unwrap() / g.frobenius_dot(&g).unwrap();
        d.axpy(-c, &g).unwrap();
        let s: f64 = g.as_slice().iter().sum();
        let dg = vjp(NormKind::Avg, &g, &d).unwrap();
        assert!(close(&dg, &d.scale(9.0 / s), 1e-12));
        assert!(fd_check(NormKind::Avg, &g, &d) < 1e-4);
    }
}
