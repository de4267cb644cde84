use makd_core::MakdVariant;
use serde::Serialize;

use super::{run_parallel, Harness, RunTrace, Teachers};
use crate::config::Pair;
use crate::record::RunRecord;

/// Seed-averaged accuracies at one `r_gn`, raw and divided by the mean over the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub teacher: String,
    pub student: String,
    pub r_gn: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub norm_train_acc: f64,
    pub norm_val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub records: Vec<RunRecord>,
    pub traces: Vec<RunTrace>,
    pub curve: Vec<CurvePoint>,
}

/// Each value divided by the mean of the finite values.
pub fn normalize_by_mean(values: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let m = finite.iter().sum::<f64>() / finite.len() as f64;
    values.iter().map(|v| v / m).collect()
}

/// GNoRP distillation at every ratio of `r_values` for every seed.
pub fn rgn_sweep(
    h: &Harness,
    pair: &Pair,
    teachers: &Teachers,
    variant: MakdVariant,
    r_values: &[f64],
    seeds: &[u64],
) -> SweepReport {
    let jobs: Vec<(usize, usize)> = (0..r_values.len())
        .flat_map(|r| (0..seeds.len()).map(move |s| (r, s)))
        .collect();
    let results = run_parallel(&jobs, h.workers, |&(r, s)| {
        let seed = seeds[s];
        let t = &teachers[&(pair.teacher.clone(), seed)];
        h.distill(pair, t, variant, h.gnorp(r_values[r]), seed, &h.data.train, &h.data.val)
    });
    let mut records = Vec::with_capacity(jobs.len());
    let mut traces = Vec::with_capacity(jobs.len());
    for (res, &(r, s)) in results.into_iter().zip(&jobs) {
        match res {
            Ok((rec, trace, _)) => {
                records.push(rec);
                traces.push(trace);
            }
            Err(e) => {
                log::warn!("r_gn {} seed {}: run failed: {e}", r_values[r], seeds[s]);
                let mut rec = RunRecord::new(
                    Some(variant),
                    &pair.teacher.to_string(),
                    &pair.student.to_string(),
                    seeds[s],
                    "gnorp",
                );
                rec.r_gn = Some(r_values[r]);
                records.push(rec);
            }
        }
    }
    let seed_mean = |r: usize, pick: fn(&RunRecord) -> Option<f64>| {
        let vals: Vec<f64> = records[r * seeds.len()..(r + 1) * seeds.len()]
            .iter()
            .filter_map(pick)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let train: Vec<f64> = (0..r_values.len()).map(|r| seed_mean(r, |x| x.train_acc)).collect();
    let val: Vec<f64> = (0..r_values.len()).map(|r| seed_mean(r, |x| x.val_acc)).collect();
    let (nt, nv) = (normalize_by_mean(&train), normalize_by_mean(&val));
    let curve = r_values
        .iter()
        .enumerate()
        .map(|(i, &r_gn)| CurvePoint {
            teacher: pair.teacher.to_string(),
            student: pair.student.to_string(),
            r_gn,
            train_acc: train[i],
            val_acc: val[i],
            norm_train_acc: nt[i],
            norm_val_acc: nv[i],
        })
        .collect();
    SweepReport { records, traces, curve }
}
