use makd_core::fit::fit_double_exponential;
use makd_core::train::{Dataset, LambdaPolicy, MlpModel};
use makd_core::{MakdVariant, Matrix, Rng};
use serde::Serialize;

use super::{finite, run_parallel, Harness, RunTrace, Teachers};
use crate::config::{LambdaSearchSection, Pair};
use crate::error::{HarnessError, Result};
use crate::record::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrial {
    pub lambda: f64,
    pub log_lambda: f64,
    /// Validation cross-entropy after the last epoch; `None` if the run failed.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSearch {
    pub teacher: String,
    pub student: String,
    pub variant: String,
    pub seed: u64,
    pub log_range: [f64; 2],
    pub trials: Vec<SearchTrial>,
    /// `(a, b, c, d)` of `a e^(b x) + c e^(d x)` over `x = ln(lambda)`.
    pub fit: Option<[f64; 4]>,
    pub fit_sse: Option<f64>,
    pub best_lambda: f64,
    /// Minimiser of the fitted curve lies on an end of the sampled range.
    pub at_boundary: bool,
    /// The fit failed and the best trial was taken instead.
    pub fallback: bool,
}

/// Picks `lambda` as the minimiser of a double-exponential fit of final
/// validation loss against `ln(lambda)`, falling back to the best trial.
pub fn select_lambda(trials: &[SearchTrial]) -> (f64, Option<[f64; 4]>, Option<f64>, bool, bool) {
    let ok: Vec<&SearchTrial> = trials.iter().filter(|t| t.val_loss.is_some()).collect();
    let empirical = ok
        .iter()
        .min_by(|a, b| a.val_loss.unwrap().total_cmp(&b.val_loss.unwrap()))
        .map_or(f64::NAN, |t| t.lambda);
    let xs: Vec<f64> = ok.iter().map(|t| t.log_lambda).collect();
    let ys: Vec<f64> = ok.iter().map(|t| t.val_loss.unwrap()).collect();
    match fit_double_exponential(&xs, &ys) {
        Ok(fit) => {
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m = fit.argmin(lo, hi);
            if m.y.is_finite() {
                let (a, b, c, d) = fit.coefficients();
                return (m.x.exp(), Some([a, b, c, d]), Some(fit.sse), m.at_boundary, false);
            }
            (empirical, None, None, false, true)
        }
        Err(e) => {
            log::warn!("double-exponential fit failed ({e}); using the best trial");
            (empirical, None, None, false, true)
        }
    }
}

/// Static-weight distillation at log-uniform random weights.
#[allow(clippy::too_many_arguments)]
pub fn lambda_random_search(
    h: &Harness,
    pair: &Pair,
    teacher: &MlpModel,
    variant: MakdVariant,
    trials: usize,
    log_range: [f64; 2],
    seed: u64,
) -> Result<(LambdaSearch, Vec<RunRecord>, Vec<RunTrace>)> {
    if trials < 8 {
        return Err(HarnessError::Config("lambda search needs at least 8 trials".into()));
    }
    let mut rng = Rng::new(seed).derive("lambda-search");
    let logs: Vec<f64> = (0..trials)
        .map(|_| rng.uniform_range(log_range[0], log_range[1]))
        .collect();
    let results = run_parallel(&logs, h.workers, |&x| {
        h.distill(
            pair,
            teacher,
            variant,
            LambdaPolicy::Static(x.exp()),
            seed,
            &h.data.train,
            &h.data.val,
        )
    });
    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut out = Vec::with_capacity(trials);
    for (&x, res) in logs.iter().zip(results) {
        let lambda = x.exp();
        match res {
            Ok((mut rec, trace, _)) => {
                let last = trace.epochs.last().expect("at least one epoch");
                out.push(SearchTrial {
                    lambda,
                    log_lambda: x,
                    val_loss: last.val_loss,
                    val_acc: last.val_acc,
                });
                rec.lambda_final = Some(lambda);
                records.push(rec);
                traces.push(trace);
            }
            Err(e) => {
                log::warn!("lambda {lambda}: run failed: {e}");
                out.push(SearchTrial {
                    lambda,
                    log_lambda: x,
                    val_loss: None,
                    val_acc: None,
                });
                let mut rec = RunRecord::new(
                    Some(variant),
                    &pair.teacher.to_string(),
                    &pair.student.to_string(),
                    seed,
                    "static",
                );
                rec.lambda_final = Some(lambda);
                records.push(rec);
            }
        }
    }
    let (best_lambda, fit, fit_sse, at_boundary, fallback) = select_lambda(&out);
    if !best_lambda.is_finite() {
        return Err(HarnessError::Config(format!(
            "every lambda-search trial for {variant} failed"
        )));
    }
    let search = LambdaSearch {
        teacher: pair.teacher.to_string(),
        student: pair.student.to_string(),
        variant: variant.to_string(),
        seed,
        log_range,
        trials: out,
        fit,
        fit_sse,
        best_lambda,
        at_boundary,
        fallback,
    };
    Ok((search, records, traces))
}

/// One arm of the comparison for one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub teacher: String,
    pub student: String,
    /// `static` or `gnorp`.
    pub arm: String,
    pub lambda: Option<f64>,
    pub r_gn: Option<f64>,
    /// Seeds joined by `;`, identical across arms.
    pub seeds: String,
    pub runs: usize,
    pub mean_test_acc: Option<f64>,
    pub min_test_acc: Option<f64>,
    pub max_test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub searches: Vec<LambdaSearch>,
    /// Final runs: per pair, the static arm then the GNoRP arm, each over all seeds.
    pub records: Vec<RunRecord>,
    pub traces: Vec<RunTrace>,
}

/// Best static weight (from a random search on the validation split) against
/// GNoRP, both retrained on train + validation and scored on the test split.
pub fn gnorp_ablation(
    h: &Harness,
    pairs: &[Pair],
    teachers: &Teachers,
    variant: MakdVariant,
    r_gn: f64,
    seeds: &[u64],
    search: LambdaSearchSection,
) -> Result<AblationReport> {
    let first = *seeds.first().ok_or_else(|| HarnessError::Config("no seeds".into()))?;
    let mut searches = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let teacher = &teachers[&(pair.teacher.clone(), first)];
        let (s, _, _) = lambda_random_search(h, pair, teacher, variant, search.trials, search.log_range, first)?;
        log::info!("{}/{}: static lambda {}", pair.teacher, pair.student, s.best_lambda);
        searches.push(s);
    }

    let full = h.data.full_train();
    let no_val = Dataset {
        features: Matrix::zeros(0, full.dim()),
        labels: Vec::new(),
        classes: full.classes,
    };
    let mut jobs = Vec::new();
    for (p, s) in searches.iter().enumerate() {
        for policy in [LambdaPolicy::Static(s.best_lambda), h.gnorp(r_gn)] {
            for &seed in seeds {
                jobs.push((p, policy, seed));
            }
        }
    }
    let results = run_parallel(&jobs, h.workers, |&(p, policy, seed)| {
        let pair = &pairs[p];
        h.distill(
            pair,
            &teachers[&(pair.teacher.clone(), seed)],
            variant,
            policy,
            seed,
            &full,
            &no_val,
        )
    });

    let mut records = Vec::with_capacity(jobs.len());
    let mut traces = Vec::new();
    for (&(p, policy, seed), res) in jobs.iter().zip(results) {
        match res {
            Ok((rec, trace, _)) => {
                records.push(rec);
                traces.push(trace);
            }
            Err(e) => {
                log::warn!("ablation run {policy:?} seed {seed} failed: {e}");
                let pair = &pairs[p];
                let name = if matches!(policy, LambdaPolicy::Static(_)) {
                    "static"
                } else {
                    "gnorp"
                };
                records.push(RunRecord::new(
                    Some(variant),
                    &pair.teacher.to_string(),
                    &pair.student.to_string(),
                    seed,
                    name,
                ));
            }
        }
    }

    let seed_list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut rows = Vec::with_capacity(2 * pairs.len());
    for (p, chunk) in records.chunks(seeds.len()).enumerate() {
        let pair = &pairs[p / 2];
        let accs: Vec<f64> = chunk.iter().filter_map(|r| r.test_acc).collect();
        let is_static = p % 2 == 0;
        let n = accs.len();
        rows.push(AblationRow {
            teacher: pair.teacher.to_string(),
            student: pair.student.to_string(),
            arm: if is_static { "static" } else { "gnorp" }.into(),
            lambda: is_static.then_some(searches[p / 2].best_lambda),
            r_gn: (!is_static).then_some(r_gn),
            seeds: seed_list.clone(),
            runs: n,
            mean_test_acc: finite(accs.iter().sum::<f64>() / n as f64),
            min_test_acc: accs.iter().copied().reduce(f64::min),
            max_test_acc: accs.iter().copied().reduce(f64::max),
        });
    }
    Ok(AblationReport {
        rows,
        searches,
        records,
        traces,
    })
}
