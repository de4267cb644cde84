use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::train::mlp::{Dense, Gradients, MlpModel};

/// Optimisation hyper-parameters shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale schedule: 40 epochs, decays at 25/32/37.
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 40,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_epochs: alloc::vec![25, 32, 37],
            decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidArgument("decay factor must lie in (0, 1]"));
        }
        if !(self.lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "lr, momentum and weight decay must be nonnegative",
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        let mut lr = self.lr;
        for _ in 0..drops {
            lr *= self.decay_factor;
        }
        lr
    }
}

/// SGD with heavy-ball momentum and coupled weight decay:
/// `v = mu v + (g + wd w)`, `w -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Dense>,
}

impl Sgd {
    pub fn new(model: &MlpModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: model
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    /// Updates every layer, or every layer but the classifier when `freeze_classifier`.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64, freeze_classifier: bool) {
        let n = model.layers().len();
        let active = if freeze_classifier { n - 1 } else { n };
        for ((layer, grad), vel) in model
            .layers_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocity)
            .take(active)
        {
            update(
                layer.weights.as_mut_slice(),
                grad.weights.as_slice(),
                vel.weights.as_mut_slice(),
                lr,
                self.momentum,
                self.weight_decay,
            );
            update(
                &mut layer.bias,
                &grad.bias,
                &mut vel.bias,
                lr,
                self.momentum,
                self.weight_decay,
            );
        }
    }
}

fn update(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64, wd: f64) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g + wd * *w;
        *w -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(24), 0.01);
        assert!((cfg.lr_at(25) - 0.001).abs() < 1e-15);
        assert!((cfg.lr_at(39) - 0.00001).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 2;
        cfg.decay_factor = 0.0;
        assert!(cfg.validate().is_err());
        cfg.decay_factor = 1.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn momentum_accumulates() {
        let mut m = MlpModel::zeros(&[1, 1]).unwrap();
        let mut opt = Sgd::new(&m, 0.5, 0.0);
        let mut g = MlpModel::zeros(&[1, 1]).unwrap().layers().to_vec();
        g[0].weights[(0, 0)] = 1.0;
        opt.step(&mut m, &g, 0.1, false);
        assert!((m.layers()[0].weights[(0, 0)] + 0.1).abs() < 1e-15);
        opt.step(&mut m, &g, 0.1, false);
        // v = 0.5 * 1 + 1
        assert!((m.layers()[0].weights[(0, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn frozen_classifier_is_untouched() {
        let mut rng = Rng::new(1);
        let mut m = MlpModel::new(&[3, 4, 2], &mut rng).unwrap();
        let before = m.clone();
        let mut opt = Sgd::new(&m, 0.9, 1e-2);
        let g: Vec<Dense> = m
            .layers()
            .iter()
            .map(|l| Dense {
                weights: l.weights.map(|_| 1.0),
                bias: l.bias.iter().map(|_| 1.0).collect(),
            })
            .collect();
        opt.step(&mut m, &g, 0.1, true);
        assert_eq!(m.layers()[1], before.layers()[1]);
        assert_ne!(m.layers()[0], before.layers()[0]);
    }
}
