//! Feature, label and metric files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};
use tldr_core::dataset::{read_csv, read_fvecs, read_ivecs, FeatureMatrix, LabelVector};

use crate::error::{usage, CliResult};

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

/// `.fvecs` or `.csv` (numeric columns, no header, no label column).
pub fn load_features(path: &Path) -> CliResult<FeatureMatrix> {
    match extension(path) {
        "fvecs" => Ok(read_fvecs(path)?),
        "csv" => Ok(read_csv(path, false)?.0),
        other => Err(usage(format!("{}: unsupported feature format '.{other}' (fvecs|csv)", path.display()))),
    }
}

/// `.ivecs` with one value per record, or text with one label per line.
pub fn load_labels(path: &Path) -> CliResult<LabelVector> {
    if extension(path) == "ivecs" {
        let (_, dim, values) = read_ivecs(path)?;
        if dim != 1 {
            return Err(usage(format!("{}: label ivecs must have dimension 1", path.display())));
        }
        return values
            .into_iter()
            .map(|v| u32::try_from(v).map_err(|_| usage(format!("negative label {v}"))))
            .collect::<CliResult<Vec<_>>>()
            .map(LabelVector);
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse()
                .map_err(|_| usage(format!("{} line {}: bad label '{l}'", path.display(), i + 1)))
        })
        .collect::<CliResult<Vec<_>>>()
        .map(LabelVector)
}

pub fn save_labels(labels: &LabelVector, path: &Path) -> CliResult<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels.as_slice() {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// One metric record: `{"metric", "value", "d", "params"}`.
#[derive(Clone, Debug)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub d: usize,
    pub params: Map<String, Value>,
}

impl Metric {
    pub fn new(name: &str, value: f64, d: usize) -> Self {
        Self {
            name: name.to_string(),
            value,
            d,
            params: Map::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json(&self) -> Value {
        json!({
            "metric": self.name,
            "value": self.value,
            "d": self.d,
            "params": self.params,
        })
    }

    /// CSV row matching [`CSV_HEADER`]; params are `key=value` joined by `;`.
    pub fn to_csv_row(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect();
        format!("{},{},{},{}", self.name, self.value, self.d, params.join(";"))
    }
}

pub const CSV_HEADER: &str = "metric,value,d,params";

/// Prints each metric as one JSON line on stdout.
pub fn emit(metrics: &[Metric]) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for m in metrics {
        writeln!(out, "{}", m.to_json())?;
    }
    Ok(())
}

pub fn write_csv(metrics: &[Metric], path: &Path) -> CliResult<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for m in metrics {
        text.push_str(&m.to_csv_row());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
