//! Result rows and their CSV / JSON encodings.

use std::path::Path;

use makd_core::{AffinityKind, LossKind, MakdVariant, NormKind};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{HarnessError, Result};

/// One training run. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Canonical variant name, or `none` for runs without distillation.
    pub variant: String,
    pub teacher: String,
    pub student: String,
    pub seed: u64,
    /// `none`, `static`, `calibrated` or `gnorp`.
    pub lambda_policy: String,
    pub lambda_final: Option<f64>,
    pub r_gn: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub probe_train_acc: Option<f64>,
    pub probe_val_acc: Option<f64>,
    pub degeneracies: u64,
    pub wall_ms: u64,
}

impl RunRecord {
    pub fn new(variant: Option<MakdVariant>, teacher: &str, student: &str, seed: u64, policy: &str) -> Self {
        Self {
            variant: variant.map_or_else(|| "none".into(), |v| v.to_string()),
            teacher: teacher.into(),
            student: student.into(),
            seed,
            lambda_policy: policy.into(),
            lambda_final: None,
            r_gn: None,
            train_acc: None,
            val_acc: None,
            test_acc: None,
            probe_train_acc: None,
            probe_val_acc: None,
            degeneracies: 0,
            wall_ms: 0,
        }
    }

    pub fn variant(&self) -> Option<MakdVariant> {
        self.variant.parse().ok()
    }
}

pub const CSV_HEADER: &str = "variant,teacher,student,seed,lambda_policy,lambda_final,r_gn,train_acc,val_acc,test_acc,probe_train_acc,probe_val_acc,degeneracies,wall_ms";

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes any serialisable rows with a header; an empty slice still gets the header
/// when `header` is given.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: Option<&str>) -> Result<()> {
    if rows.is_empty() {
        let text = header.map(|h| format!("{h}\n")).unwrap_or_default();
        return std::fs::write(path, text).map_err(|e| HarnessError::io(path, e));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_csv(path, records, Some(CSV_HEADER))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Mean max-normalised probe accuracy per variant, `None` where every run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    cells: Vec<Option<f64>>,
}

impl GridSummary {
    pub fn new(cells: Vec<Option<f64>>) -> Self {
        assert_eq!(cells.len(), 80, "one cell per variant");
        Self { cells }
    }

    pub fn get(&self, v: MakdVariant) -> Option<f64> {
        self.cells[v.index()]
    }

    /// Mean over the cells with affinity `a`.
    pub fn affinity_mean(&self, a: AffinityKind) -> Option<f64> {
        let vals: Vec<f64> = MakdVariant::all()
            .into_iter()
            .filter(|v| v.affinity == a)
            .filter_map(|v| self.get(v))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

impl Serialize for GridSummary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Norms<'a>(&'a GridSummary, AffinityKind);
        struct Losses<'a>(&'a GridSummary, AffinityKind, NormKind);
        impl Serialize for Norms<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(NormKind::ALL.len()))?;
                for n in NormKind::ALL {
                    m.serialize_entry(n.as_str(), &Losses(self.0, self.1, n))?;
                }
                m.end()
            }
        }
        impl Serialize for Losses<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(LossKind::ALL.len()))?;
                for l in LossKind::ALL {
                    let v = MakdVariant {
                        affinity: self.1,
                        norm: self.2,
                        loss: l,
                    };
                    m.serialize_entry(l.as_str(), &self.0.get(v))?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(AffinityKind::ALL.len()))?;
        for a in AffinityKind::ALL {
            m.serialize_entry(a.as_str(), &Norms(self, a))?;
        }
        m.end()
    }
}
