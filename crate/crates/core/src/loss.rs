//! Discrepancy between the student's and teacher's normalised affinities.
//!
//! The regression losses sum an elementwise penalty of `x = S - T`:
//! `L1 = |x|`, `L2 = x^2`, and `SL1` (Huber with threshold one, `0.5 x^2` for
//! `|x| < 1`, `|x| - 0.5` otherwise). `KL` applies a row softmax to both
//! matrices and computes `(1/b) sum T log(T / S)`, teacher first.

use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    L1,
    L2,
    SL1,
    KL,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [Self::L1, Self::L2, Self::SL1, Self::KL];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::SL1 => "SL1",
            Self::KL => "KL",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse {
                what: "loss",
                input: s.into(),
            })
    }
}

#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

#[inline]
pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn check(gs: &Matrix, gt: &Matrix, op: &'static str) -> Result<()> {
    if gs.shape() != gt.shape() {
        return Err(Error::Shape {
            op,
            left: gs.shape(),
            right: gt.shape(),
        });
    }
    if gs.rows() == 0 {
        return Err(Error::InvalidArgument("loss needs at least one row"));
    }
    Ok(())
}

/// Loss value; `gs` is the student matrix, `gt` the teacher's.
pub fn forward(kind: LossKind, gs: &Matrix, gt: &Matrix) -> Result<f64> {
    check(gs, gt, "loss_forward")?;
    let diffs = gs.as_slice().iter().zip(gt.as_slice()).map(|(s, t)| s - t);
    let value = match kind {
        LossKind::L1 => diffs.map(f64::abs).sum(),
        LossKind::L2 => diffs.map(|x| x * x).sum(),
        LossKind::SL1 => diffs.map(smooth_l1).sum(),
        LossKind::KL => {
            let log_s = gs.row_log_softmax();
            let log_t = gt.row_log_softmax();
            let mut acc = 0.0;
            for (&lt, &ls) in log_t.as_slice().iter().zip(log_s.as_slice()) {
                // clamp keeps log(S) finite if a caller hands us raw probabilities
                let ls = ls.max(math::ln(1e-300));
                acc += math::exp(lt) * (lt - ls);
            }
            // Gibbs: exact value is nonnegative
            (acc / gs.rows() as f64).max(0.0)
        }
    };
    Ok(value)
}

/// `dL/dgs`. The teacher matrix receives no gradient.
pub fn vjp(kind: LossKind, gs: &Matrix, gt: &Matrix) -> Result<Matrix> {
    check(gs, gt, "loss_vjp")?;
    let grad = match kind {
        LossKind::L1 => gs.zip_with(gt, "loss_vjp", |s, t| math::sign(s - t))?,
        LossKind::L2 => gs.zip_with(gt, "loss_vjp", |s, t| 2.0 * (s - t))?,
        LossKind::SL1 => gs.zip_with(gt, "loss_vjp", |s, t| smooth_l1_grad(s - t))?,
        LossKind::KL => {
            let b = gs.rows() as f64;
            gs.row_softmax()
                .zip_with(&gt.row_softmax(), "loss_vjp", |s, t| (s - t) / b)?
        }
    };
    Ok(grad)
}
