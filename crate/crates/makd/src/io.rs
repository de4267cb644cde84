//! Dataset CSV and model checkpoint files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use makd_core::train::mlp::Dense;
use makd_core::train::{Dataset, MlpModel};
use makd_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

fn format_err(path: &Path, msg: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `f0,...,f{d-1},label` rows.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.features.row(i).iter().map(f64::to_string).collect();
        row.push(data.labels[i].to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a dataset CSV. `classes` defaults to one more than the largest label.
pub fn read_dataset(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let d = header
        .len()
        .checked_sub(1)
        .filter(|&d| d > 0)
        .ok_or_else(|| format_err(path, "header must have at least one feature column and a label column"))?;
    for (k, name) in header.iter().take(d).enumerate() {
        if name != format!("f{k}") {
            return Err(format_err(
                path,
                format!("column {} must be named f{k}, found {name:?}", k + 1),
            ));
        }
    }
    if &header[d] != "label" {
        return Err(format_err(
            path,
            format!("last column must be named label, found {:?}", &header[d]),
        ));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = line + 2;
        for (k, field) in rec.iter().take(d).enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("line {row}, column f{k}: not a number: {field:?}")))?;
            if !x.is_finite() {
                return Err(format_err(path, format!("line {row}, column f{k}: non-finite value")));
            }
            values.push(x);
        }
        let label = &rec[d];
        labels.push(
            label
                .trim()
                .parse::<usize>()
                .map_err(|_| format_err(path, format!("line {row}: label {label:?} is not a class index")))?,
        );
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let features = Matrix::from_vec(labels.len(), d, values)?;
    Ok(Dataset::new(features, labels, classes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    /// `fan_in` rows of `fan_out` weights.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    arch: Vec<usize>,
    seed: u64,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub seed: u64,
}

pub fn write_checkpoint(path: &Path, model: &MlpModel, seed: u64) -> Result<()> {
    let file = CheckpointFile {
        arch: model.widths(),
        seed,
        layers: model
            .layers()
            .iter()
            .map(|l| LayerFile {
                weights: (0..l.fan_in()).map(|i| l.weights.row(i).to_vec()).collect(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &file).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(HarnessError::MissingCheckpoint(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| {
            let weights = Matrix::from_rows(&l.weights)?;
            Ok(Dense { weights, bias: l.bias })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = MlpModel::from_layers(layers)?;
    if model.widths() != file.arch {
        return Err(format_err(
            path,
            format!("layers have widths {:?} but arch says {:?}", model.widths(), file.arch),
        ));
    }
    Ok(Checkpoint { model, seed: file.seed })
}
