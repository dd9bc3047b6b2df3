//! CSV and JSON report files.

use std::path::{Path, PathBuf};

use serde::Serialize;
use tempose_core::metrics::{MetricValues, MetricsReport, Subset};

use crate::CliError;

/// Metrics of one method on every evaluated subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub subsets: Vec<MetricsReport>,
}

impl MethodReport {
    pub fn subset(&self, s: Subset) -> Option<&MetricsReport> {
        self.subsets.iter().find(|r| r.subset == s)
    }
}

#[derive(Serialize)]
struct Row<'a> {
    sequence: &'a str,
    subset: &'a str,
    metric: &'a str,
    value: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_rows<'a>(path: &Path, rows: impl IntoIterator<Item = Row<'a>>) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

fn metric_rows<'a>(
    sequence: &'a str,
    subset: Subset,
    values: &MetricValues,
    count: usize,
) -> Vec<Row<'a>> {
    let mut rows: Vec<Row> = values
        .as_pairs()
        .into_iter()
        .map(|(metric, value)| Row {
            sequence,
            subset: subset.name(),
            metric,
            value,
        })
        .collect();
    rows.push(Row {
        sequence,
        subset: subset.name(),
        metric: "poses",
        value: count as f64,
    });
    rows
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(tempose_core::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes `per_sequence.csv`, `aggregate.csv` and `report.json` into `dir`.
pub fn write_method_report(dir: &Path, report: &MethodReport) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let per_seq = dir.join("per_sequence.csv");
    write_rows(
        &per_seq,
        report.subsets.iter().flat_map(|r| {
            r.sequences
                .iter()
                .flat_map(move |s| metric_rows(&s.seq_id, r.subset, &s.values, s.count))
        }),
    )?;
    let agg = dir.join("aggregate.csv");
    write_rows(
        &agg,
        report
            .subsets
            .iter()
            .flat_map(|r| metric_rows("mean", r.subset, &r.mean, r.count)),
    )?;
    let json = dir.join("report.json");
    write_json(&json, report)?;
    Ok(vec![per_seq, agg, json])
}

#[derive(Serialize)]
struct ComparisonEntry<'a> {
    method: &'a str,
    metric: &'a str,
    #[serde(flatten)]
    values: std::collections::BTreeMap<&'static str, f64>,
}

/// Table with one row per method and metric and one column per subset,
/// written as `comparison.csv` and `comparison.json`.
pub fn write_comparison(dir: &Path, reports: &[MethodReport]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let subsets: Vec<Subset> = Subset::ALL
        .into_iter()
        .filter(|s| reports.iter().any(|r| r.subset(*s).is_some()))
        .collect();
    let csv_path = dir.join("comparison.csv");
    let mut w = csv_writer(&csv_path)?;
    let mut header = vec!["method", "metric"];
    header.extend(subsets.iter().map(|s| s.name()));
    w.write_record(&header).map_err(|e| csv_err(&csv_path, e))?;
    let mut entries = Vec::new();
    for r in reports {
        for metric in MetricValues::NAMES {
            let mut rec = vec![r.method.clone(), metric.to_string()];
            let mut values = std::collections::BTreeMap::new();
            for s in &subsets {
                match r.subset(*s) {
                    Some(m) => {
                        let v = m.mean.get(metric).expect("known metric");
                        rec.push(v.to_string());
                        values.insert(s.name(), v);
                    }
                    None => rec.push(String::new()),
                }
            }
            w.write_record(&rec).map_err(|e| csv_err(&csv_path, e))?;
            entries.push(ComparisonEntry {
                method: &r.method,
                metric,
                values,
            });
        }
    }
    w.flush().map_err(|e| csv_err(&csv_path, e))?;
    let json_path = dir.join("comparison.json");
    write_json(&json_path, &entries)?;
    Ok(vec![csv_path, json_path])
}

/// Reads back `comparison.csv` as `(method, metric, subset) -> value`.
pub fn read_comparison(path: &Path) -> Result<Vec<(String, String, Subset, f64)>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let subsets: Vec<Subset> = header[2..]
        .iter()
        .map(|h| Subset::parse(h))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (i, s) in subsets.iter().enumerate() {
            let cell = &rec[i + 2];
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|e| csv_err(path, e))?;
            out.push((rec[0].to_string(), rec[1].to_string(), *s, v));
        }
    }
    Ok(out)
}
