use std::time::Instant;

use makd_core::train::{cross_entropy, epoch_batches, init_model, linear_probe, train_feature_extractor};
use makd_core::{MakdVariant, EPS};
use serde::Serialize;

use super::{calibrate_lambda, finite, run_parallel, Harness, RunTrace, Teachers};
use crate::config::Pair;
use crate::error::Result;
use crate::record::{GridSummary, RunRecord};

/// Initial gradient norms of one search run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub variant: String,
    pub teacher: String,
    pub student: String,
    pub seed: u64,
    /// `|dL_CE/dz|` of the fresh student on the first batch, for reference.
    pub main_grad_norm: f64,
    pub makd_grad_norm: f64,
    pub lambda_cal: f64,
}

#[derive(Debug, Clone)]
pub struct SearchReport {
    /// Sorted by the variant's mean probe validation accuracy, best first.
    pub records: Vec<RunRecord>,
    pub traces: Vec<RunTrace>,
    pub calibration: Vec<CalibrationRow>,
    pub grid: GridSummary,
    /// Variants with their mean probe validation accuracy, in record order.
    pub ranking: Vec<(MakdVariant, Option<f64>)>,
    pub failures: Vec<String>,
}

struct Job<'a> {
    variant: MakdVariant,
    pair: usize,
    pairs: &'a [Pair],
    seed: u64,
}

type JobOutput = (RunRecord, Option<(RunTrace, CalibrationRow)>, Option<String>);

fn run_one(h: &Harness, teachers: &Teachers, job: &Job<'_>) -> Result<(RunRecord, RunTrace, CalibrationRow)> {
    let start = Instant::now();
    let pair = &job.pairs[job.pair];
    let teacher = &teachers[&(pair.teacher.clone(), job.seed)];
    let cfg = h.train_config(job.seed);
    let widths = h.widths(&pair.student);
    let train = &h.data.train;

    let fresh = init_model(&cfg, &widths)?;
    let first = &epoch_batches(&cfg, train.len(), 0)[0];
    let xb = train.features.select_rows(first);
    let lambda = calibrate_lambda(job.variant, &fresh, teacher, &xb)?;
    let yb: Vec<usize> = first.iter().map(|&i| train.labels[i]).collect();
    let (_, dlogits) = cross_entropy(&fresh.forward(&xb)?.logits, &yb)?;
    let main_norm = fresh.feature_grad(&dlogits)?.frobenius_norm();

    let out = train_feature_extractor(&cfg, train, teacher, &widths, job.variant, lambda)?;
    let probe = linear_probe(
        &out.model.features(&train.features)?,
        &train.labels,
        &out.model.features(&h.data.val.features)?,
        &h.data.val.labels,
        train.classes,
        h.probe,
    )?;
    if !probe.converged {
        log::warn!(
            "{} {}-{} seed {}: probe stopped after {} iterations without converging",
            job.variant,
            pair.teacher,
            pair.student,
            job.seed,
            probe.iterations
        );
    }
    let (t, s) = (pair.teacher.to_string(), pair.student.to_string());
    let mut rec = RunRecord::new(Some(job.variant), &t, &s, job.seed, "calibrated");
    rec.lambda_final = Some(lambda);
    rec.probe_train_acc = finite(probe.train_acc);
    rec.probe_val_acc = finite(probe.val_acc);
    rec.degeneracies = out.degeneracies;
    rec.wall_ms = h.elapsed_ms(start);
    let trace = RunTrace::new(&rec, &out);
    let cal = CalibrationRow {
        variant: job.variant.to_string(),
        teacher: t,
        student: s,
        seed: job.seed,
        main_grad_norm: main_norm,
        makd_grad_norm: 0.07 / lambda,
        lambda_cal: lambda,
    };
    Ok((rec, trace, cal))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Distillation-only feature training with calibrated weights for every
/// variant, pair and seed, each scored by a linear probe on frozen features.
pub fn combinatorial_search(
    h: &Harness,
    pairs: &[Pair],
    teachers: &Teachers,
    variants: &[MakdVariant],
    seeds: &[u64],
) -> SearchReport {
    let mut jobs = Vec::with_capacity(variants.len() * pairs.len() * seeds.len());
    for &variant in variants {
        for pair in 0..pairs.len() {
            for &seed in seeds {
                jobs.push(Job {
                    variant,
                    pair,
                    pairs,
                    seed,
                });
            }
        }
    }
    let outputs: Vec<JobOutput> = run_parallel(&jobs, h.workers, |job| match run_one(h, teachers, job) {
        Ok((rec, trace, cal)) => (rec, Some((trace, cal)), None),
        Err(e) => {
            let p = &pairs[job.pair];
            let msg = format!("{} {}/{} seed {}: {e}", job.variant, p.teacher, p.student, job.seed);
            log::warn!("run failed: {msg}");
            let rec = RunRecord::new(
                Some(job.variant),
                &p.teacher.to_string(),
                &p.student.to_string(),
                job.seed,
                "calibrated",
            );
            (rec, None, Some(msg))
        }
    });

    // per pair: mean over seeds, then divide by the best variant of that pair
    let mut cells = vec![None; 80];
    let mut normalised: Vec<Vec<f64>> = vec![Vec::new(); 80];
    for p in 0..pairs.len() {
        let means: Vec<(MakdVariant, Option<f64>)> = variants
            .iter()
            .map(|&v| {
                let m = mean(
                    jobs.iter()
                        .zip(&outputs)
                        .filter(|(j, _)| j.variant == v && j.pair == p)
                        .filter_map(|(_, o)| o.0.probe_val_acc),
                );
                (v, m)
            })
            .collect();
        let best = means.iter().filter_map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
        if !(best > EPS) {
            continue;
        }
        for (v, m) in means {
            if let Some(m) = m {
                normalised[v.index()].push(m / best);
            }
        }
    }
    for (cell, vals) in cells.iter_mut().zip(&normalised) {
        *cell = mean(vals.iter().copied());
    }

    let mut ranking: Vec<(MakdVariant, Option<f64>)> = variants
        .iter()
        .map(|&v| {
            let m = mean(
                jobs.iter()
                    .zip(&outputs)
                    .filter(|(j, _)| j.variant == v)
                    .filter_map(|(_, o)| o.0.probe_val_acc),
            );
            (v, m)
        })
        .collect();
    ranking.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    let position = |v: MakdVariant| ranking.iter().position(|r| r.0 == v).expect("ranked");

    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by_key(|&i| (position(jobs[i].variant), jobs[i].pair, jobs[i].seed));
    let mut records = Vec::with_capacity(jobs.len());
    let mut traces = Vec::new();
    let mut calibration = Vec::new();
    let mut failures = Vec::new();
    let mut outputs: Vec<Option<JobOutput>> = outputs.into_iter().map(Some).collect();
    for i in order {
        let (rec, extra, failure) = outputs[i].take().expect("each output once");
        records.push(rec);
        if let Some((t, c)) = extra {
            traces.push(t);
            calibration.push(c);
        }
        failures.extend(failure);
    }
    SearchReport {
        records,
        traces,
        calibration,
        grid: GridSummary::new(cells),
        ranking,
        failures,
    }
}
