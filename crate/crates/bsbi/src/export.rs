//! Plot-ready CSVs: per `(task, algorithm)` the median coverage curve and the
//! median, minimum and maximum of the scalar metrics at each budget.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::output::{median, read_csv, write_csv, CoverageRow, SummaryRow};
use crate::sweep::{Manifest, RunStatus, SweepError};

pub const COVERAGE_PLOT_FILE: &str = "plot_coverage.csv";
pub const BALANCING_PLOT_FILE: &str = "plot_balancing_error.csv";
pub const NLP_PLOT_FILE: &str = "plot_nominal_log_posterior.csv";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("missing results for {}: {}", .0.len(), .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveragePlotRow {
    pub task: String,
    pub algorithm: String,
    pub budget: usize,
    pub level: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarPlotRow {
    pub task: String,
    pub algorithm: String,
    pub budget: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

struct Spread {
    median: f64,
    min: f64,
    max: f64,
}

fn spread(v: &[f64]) -> Spread {
    Spread {
        median: median(v),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

type Cell = (String, String, usize);

/// Appends `value` to the bucket for `key`, creating buckets in first-seen order.
fn push<K: PartialEq>(groups: &mut Vec<(K, Vec<f64>)>, key: K, value: f64) {
    match groups.iter_mut().find(|(k, _)| *k == key) {
        Some((_, v)) => v.push(value),
        None => groups.push((key, vec![value])),
    }
}

/// Reads every run listed in the manifest and writes the three plot files
/// next to it. Fails, naming each cell, if any run is not done or its CSVs
/// are gone.
pub fn export_plotdata(manifest_path: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let manifest = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut missing = Vec::new();
    let mut summaries = Vec::new();
    let mut coverages = Vec::new();
    for run in &manifest.runs {
        let summary = dir.join(&run.artifacts.summary);
        let metrics = dir.join(&run.artifacts.metrics);
        if run.status != RunStatus::Done || !summary.is_file() || !metrics.is_file() {
            missing.push(run.cell());
            continue;
        }
        summaries.extend(read_csv::<SummaryRow>(&summary)?);
        coverages.extend(read_csv::<CoverageRow>(&metrics)?);
    }
    if !missing.is_empty() {
        return Err(ExportError::MissingCells(missing));
    }

    let mut cov: Vec<((Cell, f64), Vec<f64>)> = Vec::new();
    for r in &coverages {
        push(&mut cov, ((r.task.clone(), r.algorithm.clone(), r.budget), r.level), r.coverage);
    }
    let mut be: Vec<(Cell, Vec<f64>)> = Vec::new();
    let mut nlp: Vec<(Cell, Vec<f64>)> = Vec::new();
    for r in &summaries {
        let cell = (r.task.clone(), r.algorithm.clone(), r.budget);
        push(&mut be, cell.clone(), r.balancing_error);
        push(&mut nlp, cell, r.nominal_log_posterior);
    }

    let cov_rows: Vec<CoveragePlotRow> = cov
        .iter()
        .map(|(((task, algorithm, budget), level), v)| {
            let s = spread(v);
            CoveragePlotRow {
                task: task.clone(),
                algorithm: algorithm.clone(),
                budget: *budget,
                level: *level,
                median: s.median,
                min: s.min,
                max: s.max,
            }
        })
        .collect();
    let scalar = |groups: &[(Cell, Vec<f64>)]| -> Vec<ScalarPlotRow> {
        groups
            .iter()
            .map(|((task, algorithm, budget), v)| {
                let s = spread(v);
                ScalarPlotRow {
                    task: task.clone(),
                    algorithm: algorithm.clone(),
                    budget: *budget,
                    median: s.median,
                    min: s.min,
                    max: s.max,
                }
            })
            .collect()
    };

    let cov_path = dir.join(COVERAGE_PLOT_FILE);
    let be_path = dir.join(BALANCING_PLOT_FILE);
    let nlp_path = dir.join(NLP_PLOT_FILE);
    let scalar_header = &["task", "algorithm", "budget", "median", "min", "max"];
    write_csv(&cov_path, &cov_rows, &["task", "algorithm", "budget", "level", "median", "min", "max"])?;
    write_csv(&be_path, &scalar(&be), scalar_header)?;
    write_csv(&nlp_path, &scalar(&nlp), scalar_header)?;
    Ok(vec![cov_path, be_path, nlp_path])
}
