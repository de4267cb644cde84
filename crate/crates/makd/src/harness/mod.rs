//! Desk-scale experiment protocols.
//!
//! Every run is keyed by (variant, pair, seed) and draws all its randomness
//! from its own seed, so results do not depend on the worker count; outputs
//! are always sorted before they are written.

mod ablation;
mod pool;
mod search;
mod sweep;

use std::collections::BTreeMap;
use std::time::Instant;

use makd_core::train::{
    self, evaluate, make_synthetic, Dataset, LambdaPolicy, MlpModel, ProbeConfig, Splits, TrainConfig, TrainOutcome,
};
use makd_core::{makd, AdamParams, MakdVariant, Matrix, Rng, EPS};
use serde::Serialize;

use crate::config::{Arch, DatasetConfig, ExperimentConfig, Pair, TrainSection};
use crate::error::{HarnessError, Result};
use crate::io;
use crate::record::RunRecord;

pub use ablation::{gnorp_ablation, lambda_random_search, AblationReport, AblationRow, LambdaSearch, SearchTrial};
pub use pool::run_parallel;
pub use search::{combinatorial_search, CalibrationRow, SearchReport};
pub use sweep::{normalize_by_mean, rgn_sweep, CurvePoint, SweepReport};

/// Reference norm of the distillation gradient after calibration.
pub const CALIBRATION_TARGET: f64 = 0.07;

/// Everything a protocol needs besides its own arguments.
#[derive(Debug, Clone)]
pub struct Harness {
    pub data: Splits,
    pub train: TrainSection,
    pub probe: ProbeConfig,
    pub adam: AdamParams,
    pub workers: usize,
    /// Record wall time; off by default so result files are reproducible byte for byte.
    pub wall_time: bool,
}

/// Per-run trace written next to the result rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub variant: String,
    pub teacher: String,
    pub student: String,
    pub seed: u64,
    pub lambda_policy: String,
    pub lambda_min: Option<f64>,
    pub lambda_median: Option<f64>,
    pub lambda_max: Option<f64>,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub lambda: f64,
    pub main_grad_norm: f64,
    pub makd_grad_norm: f64,
}

pub(crate) fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// `(min, median, max)` of a trajectory; the median of an even count is the lower middle.
pub fn summarize(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some((v[0], v[(v.len() - 1) / 2], v[v.len() - 1]))
}

impl RunTrace {
    pub(crate) fn new(record: &RunRecord, outcome: &TrainOutcome) -> Self {
        let lambdas = outcome.lambdas();
        let s = summarize(&lambdas);
        Self {
            variant: record.variant.clone(),
            teacher: record.teacher.clone(),
            student: record.student.clone(),
            seed: record.seed,
            lambda_policy: record.lambda_policy.clone(),
            lambda_min: s.map(|s| s.0),
            lambda_median: s.map(|s| s.1),
            lambda_max: s.map(|s| s.2),
            best_epoch: outcome.best_epoch,
            epochs: outcome
                .epochs
                .iter()
                .map(|e| EpochRow {
                    epoch: e.epoch,
                    lr: e.lr,
                    train_loss: e.train_loss,
                    train_acc: e.train_acc,
                    val_loss: finite(e.val_loss),
                    val_acc: finite(e.val_acc),
                    lambda: e.lambda,
                    main_grad_norm: e.main_norm,
                    makd_grad_norm: e.makd_norm,
                })
                .collect(),
        }
    }
}

/// Teachers keyed by architecture and seed.
pub type Teachers = BTreeMap<(Arch, u64), MlpModel>;

/// `lambda` such that the distillation gradient on `x` has norm 0.07 for a fresh student.
pub fn calibrate_lambda(v: MakdVariant, student: &MlpModel, teacher: &MlpModel, x: &Matrix) -> Result<f64> {
    let zs = student.features(x)?;
    let zt = teacher.features(x)?;
    let norm = makd::grad(v, &zs, &zt)?.frobenius_norm();
    if !(norm > EPS) || !norm.is_finite() {
        return Err(HarnessError::Calibration { variant: v.to_string() });
    }
    Ok(CALIBRATION_TARGET / norm)
}

impl Harness {
    pub fn new(data: Splits, cfg: &ExperimentConfig) -> Self {
        Self {
            data,
            train: cfg.train.clone(),
            probe: cfg.probe.into(),
            adam: cfg.adam.into(),
            workers: cfg.workers,
            wall_time: false,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self::new(load_data(&cfg.dataset)?, cfg))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        self.train.with_seed(seed)
    }

    pub fn widths(&self, arch: &Arch) -> Vec<usize> {
        arch.widths(self.data.train.dim(), self.data.train.classes)
    }

    pub(crate) fn elapsed_ms(&self, start: Instant) -> u64 {
        if self.wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    /// Plain classification training of `arch` with `seed`.
    pub fn train_plain(&self, arch: &Arch, seed: u64) -> Result<(RunRecord, RunTrace, MlpModel)> {
        let start = Instant::now();
        let out = train::train_teacher(
            &self.train_config(seed),
            &self.data.train,
            &self.data.val,
            &self.widths(arch),
        )?;
        let mut rec = RunRecord::new(None, &arch.to_string(), &arch.to_string(), seed, "none");
        self.fill_accuracies(&mut rec, &out.model, &self.data.train, &self.data.val)?;
        rec.wall_ms = self.elapsed_ms(start);
        let trace = RunTrace::new(&rec, &out);
        Ok((rec, trace, out.model))
    }

    /// Trains every distinct teacher architecture for every seed.
    pub fn teachers(&self, pairs: &[Pair], seeds: &[u64]) -> Result<Teachers> {
        let mut keys: Vec<(Arch, u64)> = pairs
            .iter()
            .flat_map(|p| seeds.iter().map(|&s| (p.teacher.clone(), s)))
            .collect();
        keys.sort();
        keys.dedup();
        let models = run_parallel(&keys, self.workers, |(arch, seed)| {
            log::info!("training teacher {arch} seed {seed}");
            self.train_plain(arch, *seed).map(|(_, _, m)| m)
        });
        keys.into_iter().zip(models).map(|(k, m)| m.map(|m| (k, m))).collect()
    }

    pub(crate) fn fill_accuracies(
        &self,
        rec: &mut RunRecord,
        model: &MlpModel,
        train: &Dataset,
        val: &Dataset,
    ) -> Result<()> {
        rec.train_acc = finite(evaluate(model, train)?.1);
        rec.val_acc = finite(evaluate(model, val)?.1);
        rec.test_acc = finite(evaluate(model, &self.data.test)?.1);
        Ok(())
    }

    /// Distils one student on `train` (model selection on `val` when it is non-empty).
    #[allow(clippy::too_many_arguments)]
    pub fn distill(
        &self,
        pair: &Pair,
        teacher: &MlpModel,
        v: MakdVariant,
        policy: LambdaPolicy,
        seed: u64,
        train: &Dataset,
        val: &Dataset,
    ) -> Result<(RunRecord, RunTrace, MlpModel)> {
        let start = Instant::now();
        let out = train::distill_student(
            &self.train_config(seed),
            train,
            val,
            teacher,
            &self.widths(&pair.student),
            v,
            policy,
        )?;
        let (name, r_gn) = match policy {
            LambdaPolicy::Static(_) => ("static", None),
            LambdaPolicy::Gnorp { r_gn, .. } => ("gnorp", Some(r_gn)),
        };
        let mut rec = RunRecord::new(
            Some(v),
            &pair.teacher.to_string(),
            &pair.student.to_string(),
            seed,
            name,
        );
        rec.r_gn = r_gn;
        rec.lambda_final = out.steps.last().map(|s| s.lambda);
        rec.degeneracies = out.degeneracies;
        self.fill_accuracies(&mut rec, &out.model, train, val)?;
        rec.wall_ms = self.elapsed_ms(start);
        let trace = RunTrace::new(&rec, &out);
        Ok((rec, trace, out.model))
    }

    pub fn gnorp(&self, r_gn: f64) -> LambdaPolicy {
        LambdaPolicy::Gnorp { r_gn, adam: self.adam }
    }
}

pub fn load_data(cfg: &DatasetConfig) -> Result<Splits> {
    match cfg {
        DatasetConfig::Synthetic(s) => Ok(make_synthetic(&s.into())?),
        DatasetConfig::Csv {
            train,
            test,
            split_seed,
        } => {
            let pool = io::read_dataset(train, None)?;
            let test = io::read_dataset(test, Some(pool.classes))?;
            if test.dim() != pool.dim() {
                return Err(HarnessError::Config(format!(
                    "train has {} features but test has {}",
                    pool.dim(),
                    test.dim()
                )));
            }
            if test.labels.iter().any(|&y| y >= pool.classes) {
                return Err(HarnessError::Config("test labels outside the training classes".into()));
            }
            Ok(Splits::carve_validation(
                &pool,
                test,
                &mut Rng::new(*split_seed).derive("split"),
            ))
        }
    }
}
