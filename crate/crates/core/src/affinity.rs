//! Pairwise affinity matrices `G[i][j] = g(z_i, z_j)` over a batch.
//!
//! All ordered pairs are included, the diagonal too, so `G` is always a full
//! `b x b` symmetric matrix.
//!
//! Backward passes use `S = dG + dG^T` and the partial derivative of `g` in its
//! first argument, `dz_i = sum_j S[i][j] * d1 g(z_i, z_j)`, which also covers the
//! diagonal where both arguments move together.
//!
//! Non-smooth points follow fixed conventions: `sign(0) = 0` for `L1`, zero
//! contribution below distance `1e-12` for `L2`, and the cosine denominator is
//! `max(|z_i| |z_j|, 1e-12)` in both directions.

use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::{dot, Matrix};
use crate::EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AffinityKind {
    /// Manhattan distance.
    L1,
    /// Euclidean distance.
    L2,
    /// Inner product.
    IP,
    /// Cosine similarity.
    CS,
}

impl AffinityKind {
    pub const ALL: [AffinityKind; 4] = [Self::L1, Self::L2, Self::IP, Self::CS];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::IP => "IP",
            Self::CS => "CS",
        }
    }
}

impl fmt::Display for AffinityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AffinityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse {
                what: "affinity",
                input: s.into(),
            })
    }
}

fn check_batch(z: &Matrix) -> Result<()> {
    if z.rows() < 2 {
        return Err(Error::InvalidArgument("affinity needs a batch of at least 2 samples"));
    }
    if z.cols() < 1 {
        return Err(Error::InvalidArgument("affinity needs at least one feature"));
    }
    Ok(())
}

fn row_norms(z: &Matrix) -> alloc::vec::Vec<f64> {
    (0..z.rows()).map(|i| math::sqrt(dot(z.row(i), z.row(i)))).collect()
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Computes `G` for a `b x d` feature batch (`b >= 2`, `d >= 1`).
pub fn forward(kind: AffinityKind, z: &Matrix) -> Result<Matrix> {
    check_batch(z)?;
    let b = z.rows();
    let mut g = Matrix::zeros(b, b);
    let norms = match kind {
        AffinityKind::CS => row_norms(z),
        _ => alloc::vec::Vec::new(),
    };
    for i in 0..b {
        for j in i..b {
            let (zi, zj) = (z.row(i), z.row(j));
            let v = match kind {
                AffinityKind::L1 => l1_dist(zi, zj),
                AffinityKind::L2 => l2_dist(zi, zj),
                AffinityKind::IP => dot(zi, zj),
                AffinityKind::CS => dot(zi, zj) / (norms[i] * norms[j]).max(EPS),
            };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Number of samples whose cosine denominator hits the guard.
///
/// Always zero for the distance and inner-product metrics.
pub fn degenerate_rows(kind: AffinityKind, z: &Matrix) -> usize {
    match kind {
        AffinityKind::CS => row_norms(z).into_iter().filter(|&n| n * n < EPS).count(),
        _ => 0,
    }
}

/// Pulls an upstream gradient `dG` back to `dL/dz`.
pub fn vjp(kind: AffinityKind, z: &Matrix, dg: &Matrix) -> Result<Matrix> {
    check_batch(z)?;
    let (b, d) = z.shape();
    if dg.shape() != (b, b) {
        return Err(Error::Shape {
            op: "affinity_vjp",
            left: (b, b),
            right: dg.shape(),
        });
    }
    let sym = |i: usize, j: usize| dg[(i, j)] + dg[(j, i)];
    let mut dz = Matrix::zeros(b, d);
    match kind {
        AffinityKind::IP => {
            for i in 0..b {
                for j in 0..b {
                    let s = sym(i, j);
                    if s == 0.0 {
                        continue;
                    }
                    let zj = z.row(j);
                    for (o, &x) in dz.row_mut(i).iter_mut().zip(zj) {
                        *o += s * x;
                    }
                }
            }
        }
        AffinityKind::L1 => {
            for i in 0..b {
                for j in 0..b {
                    let s = sym(i, j);
                    if s == 0.0 || i == j {
                        continue;
                    }
                    for k in 0..d {
                        dz[(i, k)] += s * math::sign(z[(i, k)] - z[(j, k)]);
                    }
                }
            }
        }
        AffinityKind::L2 => {
            for i in 0..b {
                for j in 0..b {
                    let s = sym(i, j);
                    if s == 0.0 || i == j {
                        continue;
                    }
                    let dist = l2_dist(z.row(i), z.row(j));
                    if dist < EPS {
                        continue;
                    }
                    let c = s / dist;
                    for k in 0..d {
                        dz[(i, k)] += c * (z[(i, k)] - z[(j, k)]);
                    }
                }
            }
        }
        AffinityKind::CS => {
            let norms = row_norms(z);
            for i in 0..b {
                for j in 0..b {
                    let s = sym(i, j);
                    if s == 0.0 {
                        continue;
                    }
                    let prod = norms[i] * norms[j];
                    if prod >= EPS {
                        // d/dz_i of <z_i,z_j>/(|z_i||z_j|)
                        //   = z_j/(|z_i||z_j|) - G_ij z_i/|z_i|^2
                        let gij = dot(z.row(i), z.row(j)) / prod;
                        let a = s / prod;
                        let c = s * gij / (norms[i] * norms[i]);
                        for k in 0..d {
                            dz[(i, k)] += a * z[(j, k)] - c * z[(i, k)];
                        }
                    } else {
                        // guarded denominator is a constant
                        let a = s / EPS;
                        for k in 0..d {
                            dz[(i, k)] += a * z[(j, k)];
                        }
                    }
                }
            }
        }
    }
    Ok(dz)
}
