use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use bsbi::config::DiagnosticSettings;
use bsbi::output::{coverage_rows, summary_row, to_csv, COVERAGE_HEADER, SUMMARY_HEADER};
use bsbi::{export_plotdata, load_checkpoint, run_sweep, ExperimentConfig, RunStatus, SweepOptions};
use bsbi_core::diagnostics::{evaluate, MetricRecord};
use bsbi_core::simulators::Task;
use bsbi_core::{stream_rng, Stream};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsbi", version, about = "Balanced simulation-based inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Concurrent training runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip runs the existing manifest marks as done.
        #[arg(long)]
        resume: bool,
    },
    /// Write plot-ready CSVs next to a finished sweep's manifest.
    Export {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Evaluate a saved checkpoint on fresh test pairs and print its metrics.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long, default_value_t = 256)]
        grid_resolution: usize,
        /// Seed for the test pairs and the diagnostic randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config, jobs, resume } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_sweep(&cfg, SweepOptions { jobs, resume })?;
            let m = &report.manifest;
            println!(
                "{} runs executed; {} done, {} failed; manifest {}",
                report.executed,
                m.count(RunStatus::Done),
                m.count(RunStatus::Failed),
                report.manifest_path.display()
            );
            for run in m.runs.iter().filter(|r| r.status == RunStatus::Failed) {
                eprintln!("failed {}: {}", run.cell(), run.error.as_deref().unwrap_or(""));
            }
        }
        Command::Export { manifest } => {
            for path in export_plotdata(&manifest)? {
                println!("{}", path.display());
            }
        }
        Command::Diagnose { checkpoint, task, pairs, samples, grid_resolution, seed } => {
            let ck = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            if ck.task != task {
                bail!("checkpoint was trained on {}, not {task}", ck.task);
            }
            if pairs < 2 {
                bail!("need at least 2 test pairs");
            }
            let mut rng = stream_rng(seed, Stream::TestSet);
            let test: Vec<_> = (0..pairs).map(|_| task.sample_joint(&mut rng)).collect();
            let settings = DiagnosticSettings { test_pairs: pairs, samples, grid_resolution, ..Default::default() };
            let mut rng = stream_rng(seed, Stream::Diagnostics);
            let eval = evaluate(&ck.surrogate, &test, &settings.for_task(task), &mut rng)?;
            let record = MetricRecord {
                algorithm: ck.algorithm.name().to_string(),
                task: task.name().to_string(),
                budget: ck.budget,
                seed: ck.seed,
                coverage: eval.coverage,
                balancing_error: eval.balancing.value,
                nominal_log_posterior: eval.nominal_log_posterior,
            };
            let mut out = std::io::stdout().lock();
            out.write_all(&to_csv(&[summary_row(&record)], SUMMARY_HEADER)?)?;
            writeln!(out)?;
            out.write_all(&to_csv(&coverage_rows(&record), COVERAGE_HEADER)?)?;
        }
    }
    Ok(())
}
