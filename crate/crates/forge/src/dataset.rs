//! Feature CSVs: one row per sample, `label, f_1, ..., f_d`.
//!
//! A dataset directory holds `train.csv`, `test.csv` and `manifest.json`.

use std::fs;
use std::path::Path;

use lda_core::data::{LongTailDataset, Split, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, IoContext, Result};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Offending lines quoted in a parse error.
const MAX_REPORTED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub header: bool,
    /// Labels must fall in `[0, num_classes)`; inferred from the data when
    /// absent.
    pub num_classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            header: true,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rows {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: usize,
    pub dim: usize,
    pub counts: Vec<usize>,
    pub test_per_class: usize,
    pub seed: Option<u64>,
    pub generator: Option<SynthConfig>,
}

pub fn read_rows(path: &Path, schema: &CsvSchema) -> Result<Rows> {
    let file = fs::File::open(path).at(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    let mut bad: Vec<String> = Vec::new();
    let mut bad_total = 0;
    let mut complain = |line: u64, msg: String| {
        bad_total += 1;
        if bad.len() < MAX_REPORTED {
            bad.push(format!("line {line}: {msg}"));
        }
    };
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                complain(line, e.to_string());
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            complain(line, format!("expected a label and at least one feature, got {} fields", record.len()));
            continue;
        }
        let d = *dim.get_or_insert(record.len() - 1);
        if record.len() - 1 != d {
            complain(line, format!("ragged row: {} features, expected {d}", record.len() - 1));
            continue;
        }
        let label = match record[0].parse::<usize>() {
            Ok(y) => y,
            Err(_) => {
                complain(line, format!("label {:?} is not a non-negative integer", &record[0]));
                continue;
            }
        };
        if let Some(c) = schema.num_classes.filter(|&c| label >= c) {
            complain(line, format!("label {label} outside [0, {c})"));
            continue;
        }
        let mut row = Vec::with_capacity(d);
        for (j, field) in record.iter().skip(1).enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    complain(line, format!("feature {} = {field:?} is not a finite number", j + 1));
                    break;
                }
            }
        }
        if row.len() == d {
            features.extend(row);
            labels.push(label);
        }
    }
    if bad_total > 0 {
        let mut msg = format!("{bad_total} malformed row(s)");
        if bad_total > bad.len() {
            msg += &format!(", first {} shown", bad.len());
        }
        for b in &bad {
            msg += "\n  ";
            msg += b;
        }
        return Err(ForgeError::parse(path, msg));
    }
    let Some(dim) = dim.filter(|_| !labels.is_empty()) else {
        return Err(ForgeError::parse(path, "no data rows"));
    };
    Ok(Rows {
        features,
        dim,
        labels,
    })
}

/// Builds a dataset from a training CSV and a balanced test CSV.
pub fn ingest_csv(train: &Path, test: &Path, schema: &CsvSchema) -> Result<LongTailDataset> {
    let tr = read_rows(train, schema)?;
    let te = read_rows(test, schema)?;
    if tr.dim != te.dim {
        return Err(ForgeError::parse(
            test,
            format!("{} features per row, but the training file has {}", te.dim, tr.dim),
        ));
    }
    let classes = schema.num_classes.unwrap_or_else(|| {
        tr.labels.iter().chain(&te.labels).max().map_or(0, |m| m + 1)
    });
    let mut split = vec![Split::Train; tr.labels.len()];
    split.resize(tr.labels.len() + te.labels.len(), Split::Test);
    let mut features = tr.features;
    features.extend(te.features);
    let mut labels = tr.labels;
    labels.extend(te.labels);
    Ok(LongTailDataset::new(features, tr.dim, labels, split, classes)?)
}

pub fn load_dir(dir: &Path, header: bool) -> Result<LongTailDataset> {
    let manifest = read_manifest(dir).ok();
    let schema = CsvSchema {
        header,
        num_classes: manifest.map(|m| m.classes),
    };
    ingest_csv(&dir.join(TRAIN_FILE), &dir.join(TEST_FILE), &schema)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    serde_json::from_str(&text).map_err(|e| ForgeError::parse(&path, e.to_string()))
}

fn write_split(ds: &LongTailDataset, split: Split, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![String::from("label")];
    header.extend((1..=ds.dim()).map(|j| format!("f_{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for &i in ds.indices(split) {
        let mut rec = vec![ds.labels()[i].to_string()];
        rec.extend(ds.features().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> ForgeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ForgeError::io(path, io),
        other => ForgeError::parse(path, format!("{other:?}")),
    }
}

/// Writes `train.csv`, `test.csv` and `manifest.json` into `dir`.
pub fn export(ds: &LongTailDataset, dir: &Path, generator: Option<&SynthConfig>) -> Result<Manifest> {
    fs::create_dir_all(dir).at(dir)?;
    write_split(ds, Split::Train, &dir.join(TRAIN_FILE))?;
    write_split(ds, Split::Test, &dir.join(TEST_FILE))?;
    let manifest = Manifest {
        classes: ds.num_classes(),
        dim: ds.dim(),
        counts: ds.class_counts().to_vec(),
        test_per_class: ds.test_per_class(),
        seed: generator.map(|g| g.seed),
        generator: generator.cloned(),
    };
    crate::report::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
