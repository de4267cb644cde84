//! Gradient-norm ratio preservation.
//!
//! The distillation weight is kept as `lambda = exp(log_lambda)` and updated
//! once per mini-batch by Adam on
//!
//! ```text
//! L = (r * a - lambda * b)^2
//! ```
//!
//! where `a = |dL_main/dz|` and `b = |dL_mAKD/dz|` is the distillation gradient
//! norm at unit weight. Because the distillation gradient is linear in
//! `lambda`, `lambda * b` is exactly the norm of the weighted gradient and the
//! unique zero is `lambda* = r * a / b`.

use crate::error::{Error, Result};
use crate::math;
use crate::EPS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Target-ratio controller owned by a single training run.
#[derive(Debug, Clone, PartialEq)]
pub struct GnorpState {
    log_lambda: f64,
    r_gn: f64,
    adam: AdamParams,
    m: f64,
    v: f64,
    steps: u64,
    degenerate_steps: u64,
}

/// `lambda*` that zeroes [`GnorpState::loss`].
pub fn closed_form(r_gn: f64, main_norm: f64, makd_norm: f64) -> Result<f64> {
    if !(makd_norm > EPS) {
        return Err(Error::VanishingGradient);
    }
    Ok(r_gn * main_norm / makd_norm)
}

impl GnorpState {
    pub fn new(r_gn: f64, initial_lambda: f64, adam: AdamParams) -> Result<Self> {
        if !(r_gn > 0.0) || !r_gn.is_finite() {
            return Err(Error::InvalidArgument("r_gn must be positive"));
        }
        if !(initial_lambda > 0.0) || !initial_lambda.is_finite() {
            return Err(Error::InvalidArgument("initial lambda must be positive"));
        }
        Ok(Self {
            log_lambda: math::ln(initial_lambda),
            r_gn,
            adam,
            m: 0.0,
            v: 0.0,
            steps: 0,
            degenerate_steps: 0,
        })
    }

    /// Controller starting at the fixed point of the first batch's norms.
    ///
    /// Falls back to `lambda = 1` when the distillation gradient vanished.
    pub fn warm_start(r_gn: f64, main_norm: f64, makd_norm: f64, adam: AdamParams) -> Result<Self> {
        let init = match closed_form(r_gn, main_norm, makd_norm) {
            Ok(l) if l > 0.0 && l.is_finite() => l,
            _ => 1.0,
        };
        Self::new(r_gn, init, adam)
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        math::exp(self.log_lambda)
    }

    #[inline]
    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    #[inline]
    pub fn r_gn(&self) -> f64 {
        self.r_gn
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Steps on which the distillation gradient norm vanished.
    pub fn degenerate_steps(&self) -> u64 {
        self.degenerate_steps
    }

    pub fn loss(&self, main_norm: f64, makd_norm: f64) -> f64 {
        let d = self.r_gn * main_norm - self.lambda() * makd_norm;
        d * d
    }

    /// `dL/d(log_lambda)`.
    pub fn loss_grad(&self, main_norm: f64, makd_norm: f64) -> f64 {
        let lb = self.lambda() * makd_norm;
        -2.0 * (self.r_gn * main_norm - lb) * lb
    }

    /// One bias-corrected Adam update of `log_lambda`.
    pub fn step(&mut self, main_norm: f64, makd_norm: f64) {
        if !(makd_norm > EPS) {
            self.degenerate_steps += 1;
        }
        let mut g = self.loss_grad(main_norm, makd_norm);
        if !g.is_finite() {
            g = 0.0;
        }
        let AdamParams { lr, beta1, beta2, eps } = self.adam;
        self.steps += 1;
        self.m = beta1 * self.m + (1.0 - beta1) * g;
        self.v = beta2 * self.v + (1.0 - beta2) * g * g;
        let t = self.steps as f64;
        let m_hat = self.m / (1.0 - libm::pow(beta1, t));
        let v_hat = self.v / (1.0 - libm::pow(beta2, t));
        self.log_lambda -= lr * m_hat / (math::sqrt(v_hat) + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(r: f64, lambda: f64) -> GnorpState {
        GnorpState::new(r, lambda, AdamParams::default()).unwrap()
    }

    #[test]
    fn loss_vanishes_at_fixed_point() {
        assert!(state(1.0, 0.5).loss(1.0, 2.0) < 1e-30);
        assert!(state(3.5, 7.0).loss(0.07, 0.035) < 1e-30);
        let s = state(2.0, 3.0);
        assert!((s.loss(1.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form(1.0, 1.0, 2.0).unwrap(), 0.5);
        assert!((closed_form(3.5, 0.07, 0.035).unwrap() - 7.0).abs() < 1e-15);
        assert_eq!(closed_form(1.0, 1.0, 0.0), Err(Error::VanishingGradient));
        assert_eq!(closed_form(1.0, 1.0, 1e-13), Err(Error::VanishingGradient));
    }

    #[test]
    fn closed_form_zeroes_loss_on_random_triples() {
        let mut rng = crate::rng::Rng::new(1);
        for _ in 0..100 {
            let r = rng.uniform_range(0.5, 7.0);
            let a = libm::exp(rng.uniform_range(-5.0, 5.0));
            let b = libm::exp(rng.uniform_range(-5.0, 5.0));
            let l = closed_form(r, a, b).unwrap();
            let s = state(r, l);
            assert!(s.loss(a, b).sqrt() <= 1e-12 * r * a, "{r} {a} {b}");
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(GnorpState::new(0.0, 1.0, AdamParams::default()).is_err());
        assert!(GnorpState::new(1.0, 0.0, AdamParams::default()).is_err());
        assert!(GnorpState::new(1.0, f64::INFINITY, AdamParams::default()).is_err());
    }

    #[test]
    fn fixed_point_is_stationary() {
        let mut s = state(1.0, 0.5);
        s.step(1.0, 2.0);
        assert!((s.lambda() - 0.5).abs() < 1e-12);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn correction_direction() {
        let s = state(1.0, 0.1);
        assert!(s.loss_grad(1.0, 2.0) < 0.0);
        let mut s2 = s.clone();
        s2.step(1.0, 2.0);
        assert!(s2.lambda() > s.lambda());

        let mut s3 = state(1.0, 3.0);
        s3.step(1.0, 2.0);
        assert!(s3.lambda() < 3.0);
    }

    /// Scalar Adam on `(1 - 2 e^x)^2`, written out independently.
    fn reference_trajectory(steps: usize) -> alloc::vec::Vec<f64> {
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut out = alloc::vec::Vec::with_capacity(steps);
        for t in 1..=steps as i32 {
            let l = libm::exp(x);
            let g = -2.0 * (1.0 - 2.0 * l) * 2.0 * l;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - libm::pow(0.9, t as f64));
            let vh = v / (1.0 - libm::pow(0.999, t as f64));
            x -= 1e-3 * mh / (libm::sqrt(vh) + 1e-8);
            out.push(libm::exp(x));
        }
        out
    }

    #[test]
    fn converges_from_unit_lambda() {
        let reference = reference_trajectory(6000);
        let mut s = state(1.0, 1.0);
        let mut hit = None;
        for (k, want) in reference.iter().enumerate() {
            s.step(1.0, 2.0);
            assert!((s.lambda() - want).abs() < 1e-9, "step {k}: {} vs {want}", s.lambda());
            if hit.is_none() && (s.lambda() - 0.5).abs() / 0.5 < 0.01 {
                hit = Some(k + 1);
            }
        }
        // default Adam needs a little over 2000 steps to enter the 1% band
        let hit = hit.expect("enters the 1% band");
        assert!((2100..=2250).contains(&hit), "{hit}");
        assert!((s.lambda() - 0.5).abs() < 1e-6, "lambda {}", s.lambda());
    }

    #[test]
    fn vanishing_distillation_gradient_freezes_lambda() {
        let mut s = state(1.0, 2.0);
        s.step(1.0, 0.0);
        assert_eq!(s.lambda(), 2.0);
        assert_eq!(s.degenerate_steps(), 1);
    }

    #[test]
    fn warm_start_sits_on_fixed_point() {
        let s = GnorpState::warm_start(3.5, 0.07, 0.035, AdamParams::default()).unwrap();
        assert!((s.lambda() - 7.0).abs() < 1e-12);
        let s = GnorpState::warm_start(3.5, 0.07, 0.0, AdamParams::default()).unwrap();
        assert_eq!(s.lambda(), 1.0);
    }
}
