//! The composed objective `L(f(g(z_s)), f(g(z_t)))` and its 80 variants.
//!
//! Variants are named by their acronym triple separated by single spaces,
//! affinity first: `"CS L2 SL1"`.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::affinity::{self, AffinityKind};
use crate::error::{Error, Result};
use crate::loss::{self, LossKind};
use crate::matrix::Matrix;
use crate::normalise::{self, NormKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MakdVariant {
    pub affinity: AffinityKind,
    pub norm: NormKind,
    pub loss: LossKind,
}

impl MakdVariant {
    pub const fn new(affinity: AffinityKind, norm: NormKind, loss: LossKind) -> Self {
        Self { affinity, norm, loss }
    }

    /// Every variant, affinity-major then normalisation then loss.
    pub fn all() -> Vec<MakdVariant> {
        let mut out = Vec::with_capacity(80);
        for a in AffinityKind::ALL {
            for n in NormKind::ALL {
                for l in LossKind::ALL {
                    out.push(Self::new(a, n, l));
                }
            }
        }
        out
    }

    /// Position in [`MakdVariant::all`].
    pub fn index(&self) -> usize {
        let a = AffinityKind::ALL.iter().position(|&k| k == self.affinity).unwrap();
        let n = NormKind::ALL.iter().position(|&k| k == self.norm).unwrap();
        let l = LossKind::ALL.iter().position(|&k| k == self.loss).unwrap();
        (a * NormKind::ALL.len() + n) * LossKind::ALL.len() + l
    }

    /// Smooth losses have a zero gradient at perfect mimicry.
    pub fn has_smooth_loss(&self) -> bool {
        self.loss != LossKind::L1
    }
}

impl fmt::Display for MakdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.affinity, self.norm, self.loss)
    }
}

impl FromStr for MakdVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            what: "variant",
            input: s.into(),
        };
        let mut parts = s.split(' ');
        let (Some(a), Some(n), Some(l), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        Ok(Self::new(a.parse()?, n.parse()?, l.parse()?))
    }
}

/// Value, student gradient and guard hits of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MakdEval {
    pub value: f64,
    pub grad: Matrix,
    /// Number of guarded denominators hit on either branch.
    pub degeneracies: u32,
}

fn check_batches(zs: &Matrix, zt: &Matrix) -> Result<()> {
    if zs.rows() != zt.rows() {
        return Err(Error::Shape {
            op: "makd",
            left: zs.shape(),
            right: zt.shape(),
        });
    }
    Ok(())
}

/// Normalised affinity of one branch.
pub fn relation(v: MakdVariant, z: &Matrix) -> Result<Matrix> {
    normalise::forward(v.norm, &affinity::forward(v.affinity, z)?)
}

pub fn value(v: MakdVariant, zs: &Matrix, zt: &Matrix) -> Result<f64> {
    check_batches(zs, zt)?;
    loss::forward(v.loss, &relation(v, zs)?, &relation(v, zt)?)
}

/// `dL/dz_s`; only the student branch is differentiated.
pub fn grad(v: MakdVariant, zs: &Matrix, zt: &Matrix) -> Result<Matrix> {
    evaluate(v, zs, zt).map(|e| e.grad)
}

pub fn evaluate(v: MakdVariant, zs: &Matrix, zt: &Matrix) -> Result<MakdEval> {
    check_batches(zs, zt)?;
    let gs = affinity::forward(v.affinity, zs)?;
    let gt = affinity::forward(v.affinity, zt)?;
    let ns = normalise::forward(v.norm, &gs)?;
    let nt = normalise::forward(v.norm, &gt)?;
    let value = loss::forward(v.loss, &ns, &nt)?;
    let d_ns = loss::vjp(v.loss, &ns, &nt)?;
    let d_gs = normalise::vjp(v.norm, &gs, &d_ns)?;
    let grad = affinity::vjp(v.affinity, zs, &d_gs)?;
    let degeneracies = affinity::degenerate_rows(v.affinity, zs)
        + affinity::degenerate_rows(v.affinity, zt)
        + usize::from(normalise::is_degenerate(v.norm, &gs))
        + usize::from(normalise::is_degenerate(v.norm, &gt));
    Ok(MakdEval {
        value,
        grad,
        degeneracies: degeneracies as u32,
    })
}

/// `L_main + lambda * L_mAKD` together with its gradient w.r.t. `z_s`.
pub fn total_loss(
    main_value: f64,
    main_grad: &Matrix,
    v: MakdVariant,
    lambda: f64,
    zs: &Matrix,
    zt: &Matrix,
) -> Result<(f64, Matrix)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be nonnegative"));
    }
    let eval = evaluate(v, zs, zt)?;
    let mut g = main_grad.clone();
    g.axpy(lambda, &eval.grad)?;
    Ok((main_value + lambda * eval.value, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::string::ToString;

    #[test]
    fn registry_is_a_bijection() {
        let all = MakdVariant::all();
        assert_eq!(all.len(), 80);
        for (i, v) in all.iter().enumerate() {
            assert_eq!(v.index(), i);
            assert_eq!(v.to_string().parse::<MakdVariant>().unwrap(), *v);
        }
        let mut names: Vec<_> = all.iter().map(|v| v.to_string()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 80);
    }

    #[test]
    fn parses_figure_axis_names() {
        for name in [
            "CS L2 SL1",
            "CS L1 KL",
            "IP L2 L2",
            "L2 avg SL1",
            "IP noN L2",
            "L1 max KL",
        ] {
            assert_eq!(name.parse::<MakdVariant>().unwrap().to_string(), name);
        }
        for bad in ["CS  L2 SL1", "CS L2", "CS L2 SL1 ", "cs l2 sl1", "CS L2 SL2", ""] {
            assert!(bad.parse::<MakdVariant>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn perfect_mimicry_is_zero() {
        let z = Rng::new(1).gaussian(5, 4, 0.0, 1.0);
        for v in MakdVariant::all() {
            let e = evaluate(v, &z, &z).unwrap();
            assert!(e.value.abs() < 1e-12, "{v}");
            if v.has_smooth_loss() {
                assert!(e.grad.frobenius_norm() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn cosine_ignores_per_sample_scale() {
        let mut rng = Rng::new(2);
        let zt = rng.gaussian(4, 3, 0.0, 1.0);
        let mut zs = zt.clone();
        for i in 0..4 {
            let c = rng.uniform_range(0.1, 5.0);
            zs.row_mut(i).iter_mut().for_each(|x| *x *= c);
        }
        let v = "CS L2 SL1".parse().unwrap();
        assert!(value(v, &zs, &zt).unwrap() < 1e-20);
    }

    #[test]
    fn batch_mismatch_is_an_error() {
        let v = "IP L2 L2".parse().unwrap();
        assert!(value(v, &Matrix::zeros(3, 2), &Matrix::zeros(4, 2)).is_err());
        // widths may differ
        let mut rng = Rng::new(3);
        assert!(value(v, &rng.gaussian(3, 2, 0.0, 1.0), &rng.gaussian(3, 7, 0.0, 1.0)).is_ok());
    }

    #[test]
    fn total_loss_is_linear_in_lambda() {
        let mut rng = Rng::new(4);
        let zs = rng.gaussian(5, 3, 0.0, 1.0);
        let zt = rng.gaussian(5, 6, 0.0, 1.0);
        let main_grad = rng.gaussian(5, 3, 0.0, 1.0);
        let v = "CS L2 SL1".parse().unwrap();
        let at = |l| total_loss(0.7, &main_grad, v, l, &zs, &zt).unwrap();
        let (v0, g0) = at(0.0);
        assert_eq!(v0, 0.7);
        assert_eq!(g0, main_grad);
        let (v1, _) = at(1.3);
        let (v2, _) = at(2.6);
        assert!(((v2 - v0) - 2.0 * (v1 - v0)).abs() < 1e-12);
        assert!(total_loss(0.0, &main_grad, v, -1.0, &zs, &zt).is_err());
        assert!(total_loss(0.0, &main_grad, v, f64::NAN, &zs, &zt).is_err());
        let (vz, _) = total_loss(0.7, &main_grad, v, 3.0, &zs, &zs).unwrap();
        assert_eq!(vz, 0.7);
    }
}
