//! Sweep orchestration over task × algorithm × budget × seed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bsbi_core::diagnostics::{evaluate, MetricRecord};
use bsbi_core::objectives::{train, Algorithm};
use bsbi_core::simulators::Task;
use bsbi_core::{stream_rng, Stream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::load_or_generate;
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::ExperimentConfig;
use crate::format::{replace_file, FormatError};
use crate::output::{
    coverage_rows, median, read_csv, summary_row, train_log_rows, write_csv, CoverageRow, MedianCoverageRow,
    SummaryRow, COVERAGE_HEADER, MEDIAN_COVERAGE_HEADER, SUMMARY_HEADER, TRAIN_LOG_HEADER,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MEDIAN_COVERAGE_FILE: &str = "coverage_median.csv";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} is unreadable: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("config hash {found} differs from the manifest's {expected}; rerun without --resume")]
    ConfigChanged { expected: String, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad manifest entry: {0}")]
    BadEntry(String),
}

/// Failures inside one run; recorded in the manifest, never fatal to the sweep.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] bsbi_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("panicked: {0}")]
    Panic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Done,
    Failed,
}

/// Artifact paths, relative to the sweep's output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: String,
    pub train_log: String,
    pub metrics: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEntry {
    pub task: String,
    pub algorithm: String,
    pub budget: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub artifacts: Artifacts,
}

impl RunEntry {
    fn new(task: Task, algorithm: Algorithm, budget: usize, seed: u64) -> Self {
        let dir = format!("runs/{task}/{algorithm}/{budget}/{seed}");
        RunEntry {
            task: task.name().to_string(),
            algorithm: algorithm.name().to_string(),
            budget,
            seed,
            status: RunStatus::Pending,
            error: None,
            artifacts: Artifacts {
                checkpoint: format!("{dir}/checkpoint.bin"),
                train_log: format!("{dir}/train_log.csv"),
                metrics: format!("{dir}/metrics.csv"),
                summary: format!("{dir}/summary.csv"),
            },
        }
    }

    /// `task/algorithm/budget/seed`, as used in messages.
    pub fn cell(&self) -> String {
        format!("{}/{}/{}/seed {}", self.task, self.algorithm, self.budget, self.seed)
    }

    fn key(&self) -> (&str, &str, usize, u64) {
        (&self.task, &self.algorithm, self.budget, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    /// The resolved config, so the manifest alone describes the sweep.
    pub config: serde_json::Value,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        let mut runs = Vec::new();
        for &task in &cfg.tasks {
            for &alg in &cfg.algorithms {
                for &budget in &cfg.budgets {
                    for &seed in &cfg.seeds {
                        runs.push(RunEntry::new(task, alg, budget, seed));
                    }
                }
            }
        }
        Manifest {
            config_hash: cfg.hash(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            runs,
        }
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let bytes = std::fs::read(path).map_err(|source| SweepError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_slice(&bytes).map_err(|source| SweepError::Manifest { path: path.to_path_buf(), source })
    }

    pub fn save(&self, path: &Path) -> Result<(), SweepError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        replace_file(path, &bytes).map_err(|source| SweepError::Io { path: path.to_path_buf(), source })
    }

    pub fn count(&self, status: RunStatus) -> usize {
        self.runs.iter().filter(|r| r.status == status).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Runs executed concurrently.
    pub jobs: usize,
    /// Keep the existing manifest and skip runs already marked done.
    pub resume: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { jobs: 1, resume: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Runs executed by this invocation.
    pub executed: usize,
}

/// Trains and evaluates one cell, writing its checkpoint and CSVs.
pub fn execute_run(cfg: &ExperimentConfig, entry: &RunEntry) -> Result<MetricRecord, RunError> {
    let task: Task = entry.task.parse()?;
    let algorithm: Algorithm = entry.algorithm.parse()?;
    let out = &cfg.output;
    let dataset = load_or_generate(&out.join("datasets"), task, entry.budget, entry.seed, cfg.diagnostics.test_pairs)?;
    let (surrogate, log) = train(&cfg.train.apply(algorithm), &dataset, entry.seed)?;
    write_csv(&out.join(&entry.artifacts.train_log), &train_log_rows(&log), TRAIN_LOG_HEADER)?;
    let mut rng = stream_rng(entry.seed, Stream::Diagnostics);
    let eval = evaluate(&surrogate, &dataset.test, &cfg.diagnostics.for_task(task), &mut rng)?;
    let ck = Checkpoint { task, algorithm, budget: entry.budget, seed: entry.seed, surrogate };
    save_checkpoint(&out.join(&entry.artifacts.checkpoint), &ck)?;
    let record = MetricRecord {
        algorithm: entry.algorithm.clone(),
        task: entry.task.clone(),
        budget: entry.budget,
        seed: entry.seed,
        coverage: eval.coverage,
        balancing_error: eval.balancing.value,
        nominal_log_posterior: eval.nominal_log_posterior,
    };
    write_csv(&out.join(&entry.artifacts.metrics), &coverage_rows(&record), COVERAGE_HEADER)?;
    write_csv(&out.join(&entry.artifacts.summary), &[summary_row(&record)], SUMMARY_HEADER)?;
    Ok(record)
}

fn guarded_run(cfg: &ExperimentConfig, entry: &RunEntry) -> Result<MetricRecord, RunError> {
    catch_unwind(AssertUnwindSafe(|| execute_run(cfg, entry))).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "non-string panic payload".into());
        Err(RunError::Panic(msg))
    })
}

/// Runs every pending cell, persisting the manifest after each status
/// change, then rewrites the sweep-level CSVs from the per-run files.
pub fn run_sweep(cfg: &ExperimentConfig, opts: SweepOptions) -> Result<SweepReport, SweepError> {
    let manifest_path = cfg.output.join(MANIFEST_FILE);
    let fresh = Manifest::for_config(cfg);
    let manifest = if opts.resume && manifest_path.exists() {
        let old = Manifest::load(&manifest_path)?;
        if old.config_hash != fresh.config_hash {
            return Err(SweepError::ConfigChanged { expected: old.config_hash, found: fresh.config_hash });
        }
        if old.runs.iter().map(RunEntry::key).ne(fresh.runs.iter().map(RunEntry::key)) {
            return Err(SweepError::BadEntry("manifest runs do not match the config".into()));
        }
        old
    } else {
        fresh
    };
    manifest.save(&manifest_path)?;

    let todo: Vec<usize> = (0..manifest.runs.len()).filter(|&i| manifest.runs[i].status != RunStatus::Done).collect();
    let shared = Mutex::new((manifest, None::<SweepError>));
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let Some(&i) = todo.get(next.fetch_add(1, Ordering::Relaxed)) else { break };
        let entry = shared.lock().expect("manifest lock").0.runs[i].clone();
        let result = guarded_run(cfg, &entry);
        let mut guard = shared.lock().expect("manifest lock");
        let run = &mut guard.0.runs[i];
        match result {
            Ok(_) => {
                run.status = RunStatus::Done;
                run.error = None;
            }
            Err(e) => {
                run.status = RunStatus::Failed;
                run.error = Some(e.to_string());
            }
        }
        if let Err(e) = guard.0.save(&manifest_path) {
            guard.1.get_or_insert(e);
        }
    };
    std::thread::scope(|s| {
        for _ in 1..opts.jobs.clamp(1, todo.len().max(1)) {
            s.spawn(worker);
        }
        worker();
    });
    let (manifest, save_error) = shared.into_inner().expect("manifest lock");
    if let Some(e) = save_error {
        return Err(e);
    }
    write_aggregates(&manifest, &cfg.output)?;
    Ok(SweepReport { manifest, manifest_path, executed: todo.len() })
}

/// Sweep-level CSVs: all summary rows, all coverage rows, and the median
/// coverage over seeds per `(task, algorithm, budget, level)`. Only runs
/// marked done contribute, in manifest order.
pub fn write_aggregates(manifest: &Manifest, dir: &Path) -> Result<(), SweepError> {
    let mut summary: Vec<SummaryRow> = Vec::new();
    let mut coverage: Vec<CoverageRow> = Vec::new();
    for run in manifest.runs.iter().filter(|r| r.status == RunStatus::Done) {
        summary.extend(read_csv::<SummaryRow>(&dir.join(&run.artifacts.summary))?);
        coverage.extend(read_csv::<CoverageRow>(&dir.join(&run.artifacts.metrics))?);
    }
    write_csv(&dir.join(SUMMARY_FILE), &summary, SUMMARY_HEADER)?;
    write_csv(&dir.join(METRICS_FILE), &coverage, COVERAGE_HEADER)?;
    write_csv(&dir.join(MEDIAN_COVERAGE_FILE), &median_coverage(&coverage), MEDIAN_COVERAGE_HEADER)?;
    Ok(())
}

/// Groups rows by `(task, algorithm, budget, level)` in first-seen order and
/// takes the median coverage across seeds.
pub fn median_coverage(rows: &[CoverageRow]) -> Vec<MedianCoverageRow> {
    let mut groups: Vec<(MedianCoverageRow, Vec<f64>)> = Vec::new();
    for r in rows {
        let hit = groups.iter_mut().find(|(g, _)| {
            g.task == r.task && g.algorithm == r.algorithm && g.budget == r.budget && g.level == r.level
        });
        match hit {
            Some((_, v)) => v.push(r.coverage),
            None => groups.push((
                MedianCoverageRow {
                    task: r.task.clone(),
                    algorithm: r.algorithm.clone(),
                    budget: r.budget,
                    level: r.level,
                    median_coverage: 0.0,
                },
                vec![r.coverage],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut g, v)| {
            g.median_coverage = median(&v);
            g
        })
        .collect()
}
