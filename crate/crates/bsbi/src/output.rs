//! CSV files written per run and per sweep. Floats use Rust's shortest
//! round-trip formatting and '.' as the decimal separator.

use std::path::Path;

use bsbi_core::diagnostics::MetricRecord;
use bsbi_core::objectives::TrainLog;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::format::replace_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub algorithm: String,
    pub task: String,
    pub budget: usize,
    pub seed: u64,
    pub level: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub task: String,
    pub budget: usize,
    pub seed: u64,
    pub balancing_error: f64,
    pub nominal_log_posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(rename = "balance_B")]
    pub balance: f64,
    pub lr: f64,
}

/// Median coverage over seeds for one `(task, algorithm, budget, level)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianCoverageRow {
    pub task: String,
    pub algorithm: String,
    pub budget: usize,
    pub level: f64,
    pub median_coverage: f64,
}

pub fn coverage_rows(r: &MetricRecord) -> Vec<CoverageRow> {
    r.coverage
        .levels
        .iter()
        .zip(&r.coverage.coverage)
        .map(|(&level, &coverage)| CoverageRow {
            algorithm: r.algorithm.clone(),
            task: r.task.clone(),
            budget: r.budget,
            seed: r.seed,
            level,
            coverage,
        })
        .collect()
}

pub fn summary_row(r: &MetricRecord) -> SummaryRow {
    SummaryRow {
        algorithm: r.algorithm.clone(),
        task: r.task.clone(),
        budget: r.budget,
        seed: r.seed,
        balancing_error: r.balancing_error,
        nominal_log_posterior: r.nominal_log_posterior,
    }
}

pub fn train_log_rows(log: &TrainLog) -> Vec<TrainLogRow> {
    log.records
        .iter()
        .map(|e| TrainLogRow { epoch: e.epoch, train_loss: e.train_loss, val_loss: e.val_loss, balance: e.balance, lr: e.lr })
        .collect()
}

/// Serializes rows with a header line. An empty table still gets its header.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> csv::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> csv::Result<()> {
    Ok(replace_file(path, &to_csv(rows, header)?)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> csv::Result<Vec<T>> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

pub const COVERAGE_HEADER: &[&str] = &["algorithm", "task", "budget", "seed", "level", "coverage"];
pub const SUMMARY_HEADER: &[&str] = &["algorithm", "task", "budget", "seed", "balancing_error", "nominal_log_posterior"];
pub const TRAIN_LOG_HEADER: &[&str] = &["epoch", "train_loss", "val_loss", "balance_B", "lr"];
pub const MEDIAN_COVERAGE_HEADER: &[&str] = &["task", "algorithm", "budget", "level", "median_coverage"];

/// Median of a non-empty slice; even counts average the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0, 4.0, 1.0, 3.0, 2.0]), 3.0);
    }

    #[test]
    fn csv_roundtrip_keeps_floats_exact() {
        let rows = vec![TrainLogRow { epoch: 1, train_loss: 0.1 + 0.2, val_loss: -1e-300, balance: 1.0 / 3.0, lr: 1e-3 }];
        let bytes = to_csv(&rows, TRAIN_LOG_HEADER).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,balance_B,lr\n"));
        let back: Vec<TrainLogRow> = csv::Reader::from_reader(&bytes[..]).deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn empty_table_has_header() {
        let bytes = to_csv::<SummaryRow>(&[], SUMMARY_HEADER).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap().trim_end(), SUMMARY_HEADER.join(","));
    }
}
