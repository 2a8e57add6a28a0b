//! Machine-readable run artifacts and the comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lda_core::model::LdaModel;
use lda_core::trainer::{RunRecord, RunSummary};
use serde::{Deserialize, Serialize};

use crate::dataset::csv_err;
use crate::error::{ForgeError, IoContext, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| ForgeError::parse(path, e.to_string()))
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| csv_err(path, e))).collect()
}

/// Class weight vectors, one row per class and classifier (`h`, then `h_prime`).
pub fn write_weights(path: &Path, model: &LdaModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let d = model.dims().rep;
    let mut header = vec![String::from("classifier"), String::from("class")];
    header.extend((0..d).map(|j| format!("w_{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let heads = [("h", Some(&model.head_balanced)), ("h_prime", model.head_unbalanced.as_ref())];
    for (tag, layer) in heads {
        let Some(layer) = layer else { continue };
        for c in 0..layer.fan_out() {
            let mut rec = vec![tag.to_string(), c.to_string()];
            rec.extend(layer.unit_weights(c).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().at(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub classifier: String,
    pub class: usize,
    pub weights: Vec<f64>,
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| ForgeError::parse(path, format!("bad {what} in weights row {:?}", rec.position()));
        out.push(WeightRow {
            classifier: rec.get(0).ok_or_else(|| bad("classifier"))?.to_string(),
            class: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("class"))?,
            weights: rec
                .iter()
                .skip(2)
                .map(|s| s.parse().map_err(|_| bad("weight")))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// `confusion[true][predicted]` with a header of predicted classes.
pub fn write_confusion(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![String::from("true")];
    header.extend((0..confusion.len()).map(|c| format!("pred_{c}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (c, row) in confusion.iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

/// `summary.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub label: String,
    pub config_hash: String,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

pub const COMPARED: [&str; 7] = [
    "acc_overall",
    "acc_many",
    "acc_medium",
    "acc_few",
    "cv_h",
    "intra_over_inter",
    "cdd",
];

/// Accuracy columns that also get a delta against the first run.
const DELTAS: usize = 4;

fn metric_values(s: &RunSummary) -> Vec<Option<f64>> {
    let r = &s.final_record;
    vec![
        Some(r.acc_overall),
        r.acc_many,
        r.acc_medium,
        r.acc_few,
        Some(s.cv_balanced),
        s.intra_over_inter,
        s.cdd,
    ]
}

/// One row per run; the first run is the baseline of the delta columns.
pub fn comparison(runs: &[SummaryFile]) -> (Vec<String>, Vec<ComparisonRow>) {
    let mut header = vec![String::from("run")];
    header.extend(COMPARED.iter().map(|s| s.to_string()));
    header.extend(COMPARED[..DELTAS].iter().map(|s| format!("delta_{s}")));
    let base = runs.first().map(|r| metric_values(&r.summary));
    let rows = runs
        .iter()
        .map(|run| {
            let mut values = metric_values(&run.summary);
            let deltas: Vec<Option<f64>> = (0..DELTAS)
                .map(|i| match (values[i], base.as_ref().and_then(|b| b[i])) {
                    (Some(v), Some(b)) => Some(v - b),
                    _ => None,
                })
                .collect();
            values.extend(deltas);
            ComparisonRow {
                label: run.label.clone(),
                values,
            }
        })
        .collect();
    (header, rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

pub fn write_comparison_csv(path: &Path, header: &[String], rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let mut rec = vec![row.label.clone()];
        rec.extend(row.values.iter().map(|v| v.map_or_else(String::new, |v| v.to_string())));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

/// Right-aligned text table; absent values print as `-`.
pub fn comparison_text(header: &[String], rows: &[ComparisonRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.label.clone()];
            v.extend(r.values.iter().map(|x| {
                let s = cell(*x);
                if s.is_empty() { "-".into() } else { s }
            }));
            v
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in std::iter::once(header.to_vec()).chain(body) {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, &w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }
    out
}
