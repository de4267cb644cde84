//! Central finite-difference checks of the analytic distillation gradient.
//!
//! Instances are rejection-sampled away from non-smooth points (coordinate
//! ties for the `L1` affinity, sign changes under `L1` normalisation, near ties
//! of the maximum, zeros of the `L1` loss and `|x| = 1` for `SL1`). Behaviour
//! exactly at those points is fixed by the subgradient conventions and tested
//! separately.

use alloc::vec::Vec;

use crate::affinity::{self, AffinityKind};
use crate::loss::LossKind;
use crate::makd::{self, MakdVariant};
use crate::matrix::Matrix;
use crate::normalise::{self, NormKind};
use crate::rng::Rng;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for idx in 0..x.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let fp = f(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let fm = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        out.as_mut_slice()[idx] = (fp - fm) / (2.0 * h);
    }
    out
}

/// `|a - b| / max(|a|, |b|)` in the Frobenius norm, with a `1e-10` floor.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).expect("gradients share a shape").frobenius_norm();
    diff / a.frobenius_norm().max(b.frobenius_norm()).max(1e-10)
}

fn distinct_top_gap(g: &Matrix) -> f64 {
    let mut vals: Vec<f64> = Vec::new();
    for i in 0..g.rows() {
        for j in i..g.cols() {
            vals.push(g[(i, j)]);
        }
    }
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let top = vals[0];
    vals.iter()
        .find(|&&v| top - v > 1e-12)
        .map_or(f64::INFINITY, |&v| top - v)
}

/// True when `(zs, zt)` lies at least `margin` away from every kink of `v`.
pub fn is_kink_free(v: MakdVariant, zs: &Matrix, zt: &Matrix, margin: f64) -> bool {
    let b = zs.rows();
    if v.affinity == AffinityKind::L1 {
        for i in 0..b {
            for j in 0..i {
                if zs.row(i).iter().zip(zs.row(j)).any(|(x, y)| (x - y).abs() < margin) {
                    return false;
                }
            }
        }
    }
    let (Ok(gs), Ok(gt)) = (affinity::forward(v.affinity, zs), affinity::forward(v.affinity, zt)) else {
        return false;
    };
    if affinity::degenerate_rows(v.affinity, zs) > 0
        || normalise::is_degenerate(v.norm, &gs)
        || normalise::is_degenerate(v.norm, &gt)
    {
        return false;
    }
    if v.norm == NormKind::L1 {
        for i in 0..b {
            for j in 0..b {
                let structural_zero = i == j && matches!(v.affinity, AffinityKind::L1 | AffinityKind::L2);
                if !structural_zero && gs[(i, j)].abs() < margin {
                    return false;
                }
            }
        }
    }
    if v.norm == NormKind::Max && distinct_top_gap(&gs) < margin {
        return false;
    }
    let (Ok(ns), Ok(nt)) = (makd::relation(v, zs), makd::relation(v, zt)) else {
        return false;
    };
    for i in 0..b {
        for j in 0..b {
            let x = ns[(i, j)] - nt[(i, j)];
            let ok = match v.loss {
                LossKind::L1 => (i == j && x.abs() < 1e-12) || x.abs() >= margin,
                LossKind::SL1 => (x.abs() - 1.0).abs() >= margin,
                LossKind::L2 | LossKind::KL => true,
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub variant: MakdVariant,
    pub relative_error: f64,
    /// Instances drawn and discarded because they were too close to a kink.
    pub rejected: u32,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.relative_error < tol
    }
}

/// Draws a kink-free Gaussian instance and compares analytic and numerical gradients.
pub fn check_variant(
    v: MakdVariant,
    rng: &mut Rng,
    batch: usize,
    student_dim: usize,
    teacher_dim: usize,
    h: f64,
) -> GradCheck {
    let margin = 1e-3;
    let mut rejected = 0;
    let (zs, zt) = loop {
        let zs = rng.gaussian(batch, student_dim, 0.0, 1.0);
        let zt = rng.gaussian(batch, teacher_dim, 0.0, 1.0);
        if is_kink_free(v, &zs, &zt, margin) {
            break (zs, zt);
        }
        rejected += 1;
    };
    let analytic = makd::grad(v, &zs, &zt).expect("shapes are consistent");
    let numeric = central_difference(|z| makd::value(v, z, &zt).expect("shapes are consistent"), &zs, h);
    GradCheck {
        variant: v,
        relative_error: relative_error(&analytic, &numeric),
        rejected,
    }
}

/// `instances` checks for each of the 80 variants, in registry order.
///
/// Each variant gets its own stream derived from `seed` and its name.
pub fn check_all(seed: u64, instances: usize) -> Vec<GradCheck> {
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(80 * instances);
    for v in MakdVariant::all() {
        let mut rng = root.derive(&alloc::format!("gradcheck/{v}"));
        for _ in 0..instances {
            out.push(check_variant(v, &mut rng, 5, 6, 9, 1e-5));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let g = central_difference(|m| m.frobenius_dot(m).unwrap(), &x, 1e-5);
        assert!(relative_error(&g, &x.scale(2.0)) < 1e-9);
    }

    #[test]
    fn cosine_no_normalisation_chain() {
        let v: MakdVariant = "CS noN L2".parse().unwrap();
        let mut rng = Rng::new(1);
        let r = check_variant(v, &mut rng, 5, 6, 9, 1e-5);
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn max_margin_detects_ties() {
        let g = Matrix::from_rows(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        // the symmetric duplicate is one value, so the gap is to the zero diagonal
        assert_eq!(distinct_top_gap(&g), 2.0);
    }
}
