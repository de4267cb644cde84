//! Mini-batch training loops for teachers, distilled students and
//! distillation-only feature extractors.
//!
//! A run is fully determined by its [`TrainConfig`]: the student's weights come
//! from the stream `seed/init` and the epoch-`e` batch order from
//! `seed/shuffle/e`. A student distilled with a static zero weight therefore
//! follows exactly the trajectory of plain training with the same seed.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gnorp::{AdamParams, GnorpState};
use crate::makd::{self, MakdVariant};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::train::data::Dataset;
use crate::train::mlp::{accuracy, cross_entropy, MlpModel};
use crate::train::optim::{Sgd, TrainConfig};

/// How the distillation weight is chosen on every mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Static(f64),
    /// Ratio-preserving controller with target `r_gn`, warm-started on the first batch.
    Gnorp {
        r_gn: f64,
        adam: AdamParams,
    },
}

impl LambdaPolicy {
    pub fn gnorp(r_gn: f64) -> Self {
        Self::Gnorp {
            r_gn,
            adam: AdamParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub lambda: f64,
    /// `|dL_main/dz|`.
    pub main_norm: f64,
    /// `|dL_mAKD/dz|` at unit weight.
    pub makd_norm: f64,
}

impl StepLog {
    /// `lambda |dL_mAKD/dz| / |dL_main/dz|`.
    pub fn ratio(&self) -> f64 {
        self.lambda * self.makd_norm / self.main_norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Mean accuracy over the epoch's mini-batches, before each update.
    pub train_acc: f64,
    /// `NaN` when there is no validation split.
    pub val_loss: f64,
    pub val_acc: f64,
    pub lambda: f64,
    pub main_norm: f64,
    pub makd_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation-accuracy checkpoint, or the final model when there is
    /// no validation split or no classification objective.
    pub model: MlpModel,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
    pub degeneracies: u64,
}

impl TrainOutcome {
    pub fn last_epoch(&self) -> &EpochLog {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lambda).collect()
    }
}

/// Mini-batch index lists for `epoch`; trailing batches smaller than two are dropped.
pub fn epoch_batches(cfg: &TrainConfig, n: usize, epoch: usize) -> Vec<Vec<usize>> {
    let perm = Rng::new(cfg.seed)
        .derive("shuffle")
        .derive_index(epoch as u64)
        .permutation(n);
    perm.chunks(cfg.batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Fresh He-initialised model drawn from `seed/init`.
pub fn init_model(cfg: &TrainConfig, widths: &[usize]) -> Result<MlpModel> {
    MlpModel::new(widths, &mut Rng::new(cfg.seed).derive("init"))
}

/// Mean cross-entropy and accuracy of `model` on `data`.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let logits = model.forward(&data.features)?.logits;
    let (loss, _) = cross_entropy(&logits, &data.labels)?;
    Ok((loss, accuracy(&logits, &data.labels)))
}

enum Mode<'a> {
    Plain,
    Distill {
        teacher: &'a MlpModel,
        variant: MakdVariant,
        policy: LambdaPolicy,
    },
    /// Distillation loss alone with a fixed weight; the classifier stays frozen.
    FeatureOnly {
        teacher: &'a MlpModel,
        variant: MakdVariant,
        lambda: f64,
    },
}

fn check_teacher(teacher: &MlpModel, train: &Dataset) -> Result<()> {
    if teacher.input_dim() != train.dim() {
        return Err(Error::Shape {
            op: "teacher input",
            left: (1, teacher.input_dim()),
            right: (1, train.dim()),
        });
    }
    Ok(())
}

/// Plain cross-entropy training.
pub fn train_teacher(cfg: &TrainConfig, train: &Dataset, val: &Dataset, widths: &[usize]) -> Result<TrainOutcome> {
    run(cfg, train, val, widths, Mode::Plain)
}

/// Cross-entropy plus weighted distillation on the penultimate features.
pub fn distill_student(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    teacher: &MlpModel,
    widths: &[usize],
    variant: MakdVariant,
    policy: LambdaPolicy,
) -> Result<TrainOutcome> {
    check_teacher(teacher, train)?;
    match policy {
        LambdaPolicy::Static(l) if !(l >= 0.0) || !l.is_finite() => {
            return Err(Error::InvalidArgument("static lambda must be finite and nonnegative"))
        }
        LambdaPolicy::Gnorp { r_gn, .. } if !(r_gn > 0.0) => {
            return Err(Error::InvalidArgument("r_gn must be positive"))
        }
        _ => {}
    }
    run(
        cfg,
        train,
        val,
        widths,
        Mode::Distill {
            teacher,
            variant,
            policy,
        },
    )
}

/// Trains everything but the classifier on `lambda * L_mAKD` alone.
pub fn train_feature_extractor(
    cfg: &TrainConfig,
    train: &Dataset,
    teacher: &MlpModel,
    widths: &[usize],
    variant: MakdVariant,
    lambda: f64,
) -> Result<TrainOutcome> {
    check_teacher(teacher, train)?;
    let empty = Dataset {
        features: Matrix::zeros(0, train.dim()),
        labels: Vec::new(),
        classes: train.classes,
    };
    run(
        cfg,
        train,
        &empty,
        widths,
        Mode::FeatureOnly {
            teacher,
            variant,
            lambda,
        },
    )
}

fn run(cfg: &TrainConfig, train: &Dataset, val: &Dataset, widths: &[usize], mode: Mode<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if widths.first() != Some(&train.dim()) {
        return Err(Error::InvalidArgument("first width must match the input dimension"));
    }
    if widths.last() != Some(&train.classes) {
        return Err(Error::InvalidArgument("last width must match the number of classes"));
    }
    let mut model = init_model(cfg, widths)?;
    let mut opt = Sgd::new(&model, cfg.momentum, cfg.weight_decay);

    // the teacher is frozen, so its features can be computed once
    let teacher_z = match &mode {
        Mode::Plain => None,
        Mode::Distill { teacher, .. } | Mode::FeatureOnly { teacher, .. } => Some(teacher.features(&train.features)?),
    };
    let select_best = matches!(mode, Mode::Plain | Mode::Distill { .. }) && !val.is_empty();

    let mut controller: Option<GnorpState> = None;
    let mut steps = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut degeneracies = 0u64;
    let mut best: Option<(f64, usize, MlpModel)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = epoch_batches(cfg, train.len(), epoch);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        let (mut lambda_last, mut main_sum, mut makd_sum) = (0.0, 0.0, 0.0);
        for (step, idx) in batches.iter().enumerate() {
            let xb = train.features.select_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let fwd = model.forward(&xb)?;
            let (ce, dlogits) = cross_entropy(&fwd.logits, &yb)?;
            acc_sum += accuracy(&fwd.logits, &yb);
            let main_norm = model.feature_grad(&dlogits)?.frobenius_norm();

            let grads = match &mode {
                Mode::Plain => {
                    loss_sum += ce;
                    steps.push(StepLog {
                        lambda: 0.0,
                        main_norm,
                        makd_norm: 0.0,
                    });
                    model.backward(&fwd, Some(&dlogits), None)?
                }
                Mode::Distill { variant, policy, .. } => {
                    let zt = teacher_z.as_ref().expect("set for distillation").select_rows(idx);
                    let eval = makd::evaluate(*variant, fwd.features(), &zt)?;
                    degeneracies += u64::from(eval.degeneracies);
                    let makd_norm = eval.grad.frobenius_norm();
                    let lambda = match policy {
                        LambdaPolicy::Static(l) => *l,
                        LambdaPolicy::Gnorp { r_gn, adam } => {
                            let state = match controller.as_mut() {
                                Some(s) => s,
                                None => controller.insert(GnorpState::warm_start(*r_gn, main_norm, makd_norm, *adam)?),
                            };
                            state.step(main_norm, makd_norm);
                            state.lambda()
                        }
                    };
                    loss_sum += ce + lambda * eval.value;
                    lambda_last = lambda;
                    makd_sum += makd_norm;
                    steps.push(StepLog {
                        lambda,
                        main_norm,
                        makd_norm,
                    });
                    let extra = (lambda != 0.0).then(|| eval.grad.scale(lambda));
                    model.backward(&fwd, Some(&dlogits), extra.as_ref())?
                }
                Mode::FeatureOnly { variant, lambda, .. } => {
                    let zt = teacher_z.as_ref().expect("set for distillation").select_rows(idx);
                    let eval = makd::evaluate(*variant, fwd.features(), &zt)?;
                    degeneracies += u64::from(eval.degeneracies);
                    let makd_norm = eval.grad.frobenius_norm();
                    loss_sum += lambda * eval.value;
                    lambda_last = *lambda;
                    makd_sum += makd_norm;
                    steps.push(StepLog {
                        lambda: *lambda,
                        main_norm,
                        makd_norm,
                    });
                    model.backward(&fwd, None, Some(&eval.grad.scale(*lambda)))?
                }
            };
            main_sum += main_norm;
            if !loss_sum.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            let freeze = matches!(mode, Mode::FeatureOnly { .. });
            opt.step(&mut model, &grads, lr, freeze);
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: batches.len(),
            });
        }
        let nb = batches.len().max(1) as f64;
        let (val_loss, val_acc) = evaluate(&model, val)?;
        epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / nb,
            train_acc: acc_sum / nb,
            val_loss,
            val_acc,
            lambda: lambda_last,
            main_norm: main_sum / nb,
            makd_norm: makd_sum / nb,
        });
        if select_best && best.as_ref().is_none_or(|b| val_acc > b.0) {
            best = Some((val_acc, epoch, model.clone()));
        }
    }
    if let Some(state) = &controller {
        degeneracies += state.degenerate_steps();
    }
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs - 1, model),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        epochs,
        steps,
        degeneracies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::data::{make_synthetic, SyntheticSpec};

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 6,
            decay_epochs: alloc::vec![4],
            seed,
            ..TrainConfig::default()
        }
    }

    fn small_data() -> crate::train::data::Splits {
        let mut spec = SyntheticSpec::standard(5);
        spec.n_train = 400;
        spec.n_test = 200;
        make_synthetic(&spec).unwrap()
    }

    #[test]
    fn batches_cover_each_sample_once() {
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let b = epoch_batches(&cfg, 10, 0);
        // 4 + 4 + 2
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let b = epoch_batches(&cfg, 9, 0);
        assert_eq!(b.len(), 2);
        assert_ne!(epoch_batches(&cfg, 10, 0), epoch_batches(&cfg, 10, 1));
    }

    #[test]
    fn training_is_deterministic() {
        let d = small_data();
        let a = train_teacher(&small_cfg(1), &d.train, &d.val, &[20, 16, 4]).unwrap();
        let b = train_teacher(&small_cfg(1), &d.train, &d.val, &[20, 16, 4]).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let d = small_data();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            ..small_cfg(2)
        };
        let out = train_teacher(&cfg, &d.train, &d.val, &[20, 8, 4]).unwrap();
        assert_eq!(out.model, init_model(&cfg, &[20, 8, 4]).unwrap());
    }

    #[test]
    fn static_zero_lambda_matches_plain_training() {
        let d = small_data();
        let cfg = small_cfg(3);
        let teacher = train_teacher(&cfg, &d.train, &d.val, &[20, 32, 4]).unwrap().model;
        let plain = train_teacher(&cfg, &d.train, &d.val, &[20, 8, 4]).unwrap();
        let v = "CS L2 SL1".parse().unwrap();
        let distilled = distill_student(
            &cfg,
            &d.train,
            &d.val,
            &teacher,
            &[20, 8, 4],
            v,
            LambdaPolicy::Static(0.0),
        )
        .unwrap();
        assert_eq!(plain.model, distilled.model);
        for (p, q) in plain.epochs.iter().zip(&distilled.epochs) {
            assert_eq!(
                (p.train_acc, p.val_acc, p.val_loss),
                (q.train_acc, q.val_acc, q.val_loss)
            );
        }
    }

    #[test]
    fn teacher_is_not_modified() {
        let d = small_data();
        let cfg = small_cfg(4);
        let teacher = train_teacher(&cfg, &d.train, &d.val, &[20, 32, 4]).unwrap().model;
        let snapshot = teacher.clone();
        let v = "IP L2 L2".parse().unwrap();
        distill_student(
            &cfg,
            &d.train,
            &d.val,
            &teacher,
            &[20, 8, 4],
            v,
            LambdaPolicy::gnorp(2.0),
        )
        .unwrap();
        assert_eq!(teacher, snapshot);
    }

    #[test]
    fn feature_extractor_keeps_classifier() {
        let d = small_data();
        let cfg = small_cfg(5);
        let teacher = train_teacher(&cfg, &d.train, &d.val, &[20, 32, 4]).unwrap().model;
        let v = "CS L2 SL1".parse().unwrap();
        let out = train_feature_extractor(&cfg, &d.train, &teacher, &[20, 8, 8, 4], v, 1.0).unwrap();
        let init = init_model(&cfg, &[20, 8, 8, 4]).unwrap();
        assert_eq!(out.model.classifier(), init.classifier());
        assert_ne!(out.model.layers()[0], init.layers()[0]);
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let d = small_data();
        assert!(train_teacher(&small_cfg(1), &d.train, &d.val, &[19, 8, 4]).is_err());
        assert!(train_teacher(&small_cfg(1), &d.train, &d.val, &[20, 8, 3]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let d = small_data();
        let cfg = TrainConfig {
            lr: 1e6,
            momentum: 0.0,
            ..small_cfg(6)
        };
        let err = train_teacher(&cfg, &d.train, &d.val, &[20, 16, 4]).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }
}
