use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bsbi::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use bsbi::config::ConfigError;
use bsbi::export::{export_plotdata, BALANCING_PLOT_FILE, COVERAGE_PLOT_FILE, NLP_PLOT_FILE};
use bsbi::sweep::{MANIFEST_FILE, MEDIAN_COVERAGE_FILE, METRICS_FILE, SUMMARY_FILE};
use bsbi::{run_sweep, ExperimentConfig, ExportError, FormatError, Manifest, RunStatus, SweepError, SweepOptions};
use bsbi_core::objectives::{train, Algorithm, Surrogate, TrainConfig};
use bsbi_core::simulators::{generate_dataset_with, pairs_to_tensors, Task};
use tempfile::TempDir;

const TINY_TRAIN: &str = r#"
[train]
max_epochs = 2
batch = 128
classifier_depth = 1
classifier_hidden = 8
flow_transforms = 1
flow_hidden = 8
flow_depth = 1

[diagnostics]
test_pairs = 20
samples = 64
grid_resolution = 64
"#;

fn config_text(algorithms: &str, budgets: &str, seeds: &str) -> String {
    format!(
        "[sweep]\ntasks = [\"gaussian-linear\"]\nalgorithms = {algorithms}\nbudgets = {budgets}\nseeds = {seeds}\noutput = \"out\"\n{TINY_TRAIN}"
    )
}

fn standard_text() -> String {
    config_text(r#"["NPE", "BNPE"]"#, "[1024]", "[0, 1, 2, 3, 4]")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("sweep.toml");
    fs::write(&path, text).unwrap();
    path
}

fn config_in(dir: &Path, text: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(text).unwrap();
    cfg.output = dir.join("out");
    cfg
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

/// Every CSV under `dir`, keyed by relative path.
fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

#[test]
fn two_algorithms_five_seeds_give_ten_summary_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &standard_text());
    let report = run_sweep(&cfg, SweepOptions::default()).unwrap();
    assert_eq!(report.executed, 10);
    assert_eq!(report.manifest.count(RunStatus::Done), 10);
    let summary = read(cfg.output.join(SUMMARY_FILE));
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("algorithm,task,budget,seed,balancing_error,nominal_log_posterior"));
    assert_eq!(lines.count(), 10);
    let metrics = read(cfg.output.join(METRICS_FILE));
    assert_eq!(metrics.lines().count(), 1 + 10 * 19);
}

#[test]
fn resume_skips_done_runs_and_redoes_interrupted_ones() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &standard_text());
    run_sweep(&cfg, SweepOptions::default()).unwrap();
    let before = csv_files(&cfg.output);

    let again = run_sweep(&cfg, SweepOptions { jobs: 1, resume: true }).unwrap();
    assert_eq!(again.executed, 0);
    assert_eq!(csv_files(&cfg.output), before);

    // Pretend the sweep died while the fourth run was in flight.
    let path = cfg.output.join(MANIFEST_FILE);
    let mut m = Manifest::load(&path).unwrap();
    m.runs[3].status = RunStatus::Pending;
    fs::remove_file(cfg.output.join(&m.runs[3].artifacts.summary)).unwrap();
    m.save(&path).unwrap();
    let resumed = run_sweep(&cfg, SweepOptions { jobs: 1, resume: true }).unwrap();
    assert_eq!(resumed.executed, 1);
    assert_eq!(resumed.manifest.count(RunStatus::Done), 10);
    assert_eq!(csv_files(&cfg.output), before);
}

#[test]
fn resume_refuses_a_changed_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &config_text(r#"["NPE"]"#, "[256]", "[0]"));
    run_sweep(&cfg, SweepOptions::default()).unwrap();
    let mut changed = cfg.clone();
    changed.train.max_epochs = Some(3);
    let err = run_sweep(&changed, SweepOptions { jobs: 1, resume: true }).unwrap_err();
    assert!(matches!(err, SweepError::ConfigChanged { .. }), "{err}");
}

#[test]
fn identical_configs_write_identical_csvs_regardless_of_jobs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let text = config_text(r#"["NRE", "BNPE"]"#, "[256]", "[0, 1]");
    let ca = config_in(a.path(), &text);
    let cb = config_in(b.path(), &text);
    run_sweep(&ca, SweepOptions::default()).unwrap();
    run_sweep(&cb, SweepOptions { jobs: 3, resume: false }).unwrap();
    let (fa, fb) = (csv_files(&ca.output), csv_files(&cb.output));
    assert_eq!(fa.len(), 4 * 3 + 3);
    assert_eq!(fa, fb);
}

/// Parses a CSV by hand so the oracle shares no code with the harness.
fn parse_table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn median_coverage_matches_recomputation_from_per_run_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &standard_text());
    let report = run_sweep(&cfg, SweepOptions::default()).unwrap();

    let mut per_cell: Vec<((String, String), Vec<f64>)> = Vec::new();
    for run in &report.manifest.runs {
        let (h, rows) = parse_table(&read(cfg.output.join(&run.artifacts.metrics)));
        for r in rows {
            let key = (r[column(&h, "algorithm")].clone(), r[column(&h, "level")].clone());
            let c: f64 = r[column(&h, "coverage")].parse().unwrap();
            match per_cell.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(c),
                None => per_cell.push((key, vec![c])),
            }
        }
    }
    let (h, rows) = parse_table(&read(cfg.output.join(MEDIAN_COVERAGE_FILE)));
    assert_eq!(rows.len(), per_cell.len());
    for r in rows {
        let key = (r[column(&h, "algorithm")].clone(), r[column(&h, "level")].clone());
        let mut v = per_cell.iter().find(|(k, _)| *k == key).unwrap().1.clone();
        assert_eq!(v.len(), 5);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: f64 = r[column(&h, "median_coverage")].parse().unwrap();
        assert_eq!(got, v[2], "{key:?}");
    }
}

#[test]
fn export_reports_spread_and_third_order_statistic() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &standard_text());
    let report = run_sweep(&cfg, SweepOptions::default()).unwrap();
    let files = export_plotdata(&report.manifest_path).unwrap();
    assert_eq!(files.len(), 3);

    let (sh, summary) = parse_table(&read(cfg.output.join(SUMMARY_FILE)));
    for (file, metric) in [(BALANCING_PLOT_FILE, "balancing_error"), (NLP_PLOT_FILE, "nominal_log_posterior")] {
        let (h, rows) = parse_table(&read(cfg.output.join(file)));
        assert_eq!(rows.len(), 2);
        for r in rows {
            let alg = &r[column(&h, "algorithm")];
            let mut v: Vec<f64> = summary
                .iter()
                .filter(|s| &s[column(&sh, "algorithm")] == alg)
                .map(|s| s[column(&sh, metric)].parse().unwrap())
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let get = |c: &str| r[column(&h, c)].parse::<f64>().unwrap();
            assert_eq!(get("median"), v[2]);
            assert_eq!(get("min"), v[0]);
            assert_eq!(get("max"), v[4]);
        }
    }
    let (h, rows) = parse_table(&read(cfg.output.join(COVERAGE_PLOT_FILE)));
    assert_eq!(rows.len(), 2 * 19);
    for r in rows {
        let get = |c: &str| r[column(&h, c)].parse::<f64>().unwrap();
        assert!(get("min") <= get("median") && get("median") <= get("max"));
    }
}

#[test]
fn export_names_the_missing_cell() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &standard_text());
    let report = run_sweep(&cfg, SweepOptions::default()).unwrap();
    let victim = &report.manifest.runs[7];
    fs::remove_file(cfg.output.join(&victim.artifacts.metrics)).unwrap();
    let err = export_plotdata(&report.manifest_path).unwrap_err();
    match &err {
        ExportError::MissingCells(cells) => assert_eq!(cells, &vec!["gaussian-linear/BNPE/1024/seed 2".to_string()]),
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("gaussian-linear/BNPE/1024/seed 2"));
}

#[test]
fn failed_run_is_recorded_and_the_sweep_continues() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path(), &config_text(r#"["NPE"]"#, "[256]", "[0, 1, 2]"));
    // A non-empty directory where seed 1's dataset cache belongs cannot be replaced.
    let blocker = cfg.output.join("datasets/gaussian-linear-256-1.bin");
    fs::create_dir_all(blocker.join("occupied")).unwrap();
    let report = run_sweep(&cfg, SweepOptions::default()).unwrap();
    let m = &report.manifest;
    assert_eq!(m.count(RunStatus::Done), 2);
    assert_eq!(m.runs[1].status, RunStatus::Failed);
    assert!(m.runs[1].error.as_deref().is_some_and(|e| !e.is_empty()));
    assert_eq!(read(cfg.output.join(SUMMARY_FILE)).lines().count(), 3);
    let on_disk = Manifest::load(&report.manifest_path).unwrap();
    assert_eq!(&on_disk, m);
}

#[test]
fn config_validation() {
    let bad = [
        config_text("[]", "[256]", "[0]"),
        config_text(r#"["NPE"]"#, "[1024, 256]", "[0]"),
        config_text(r#"["NPE"]"#, "[300]", "[0]"),
        config_text(r#"["NPE"]"#, "[256]", "[]"),
        config_text(r#"["SNPE"]"#, "[256]", "[0]"),
    ];
    for text in &bad {
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Invalid(_))), "{text}");
    }
    let unknown = format!("{}\nwarmup = 3\n", standard_text().replace("[diagnostics]", "[diagnostics]\ncolour = 1"));
    assert!(matches!(ExperimentConfig::parse(&unknown), Err(ConfigError::Parse(_))));

    let defaults = ExperimentConfig::parse("[sweep]\ntasks = [\"two-moons\"]\nalgorithms = [\"BNRE\"]\noutput = \"o\"\n").unwrap();
    assert_eq!(defaults.budgets, vec![256, 1024, 4096, 16384]);
    assert_eq!(defaults.seeds.len(), 5);
}

fn tiny_train_config(algorithm: Algorithm) -> TrainConfig {
    let mut c = TrainConfig::new(algorithm);
    c.max_epochs = 2;
    c.classifier_depth = 2;
    c.classifier_hidden = 16;
    c.flow.hidden = 16;
    c.flow.transforms = 2;
    c
}

fn probe_roundtrip(algorithm: Algorithm, task: Task) {
    let data = generate_dataset_with(task, 256, 11, 100).unwrap();
    let (surrogate, _) = train(&tiny_train_config(algorithm), &data, 11).unwrap();
    let ck = Checkpoint { task, algorithm, budget: 256, seed: 11, surrogate };
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("ck.bin");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let (t, x) = pairs_to_tensors(&data.test).unwrap();
    let a = ck.surrogate.log_unnorm_batch(&t, &x).unwrap();
    let b = back.surrogate.log_unnorm_batch(&t, &x).unwrap();
    assert_eq!(a.len(), 100);
    let max_diff = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert_eq!(max_diff, 0.0);
    assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    probe_roundtrip(Algorithm::Bnre, Task::TwoMoons);
    probe_roundtrip(Algorithm::NreC, Task::Slcp);
    probe_roundtrip(Algorithm::BnpeInit, Task::TwoMoons);
    probe_roundtrip(Algorithm::Npe, Task::GaussianLinear);
}

#[test]
fn corrupted_checkpoints_give_structured_errors() {
    let data = generate_dataset_with(Task::TwoMoons, 256, 3, 10).unwrap();
    let (surrogate, _) = train(&tiny_train_config(Algorithm::Npe), &data, 3).unwrap();
    let ck = Checkpoint { task: Task::TwoMoons, algorithm: Algorithm::Npe, budget: 256, seed: 3, surrogate };
    let good = encode_checkpoint(&ck).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad_magic), Err(FormatError::BadMagic(m)) if &m == b"XSBI"));

    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(matches!(decode_checkpoint(&bad_version), Err(FormatError::Version { found: 9 })));

    assert!(decode_checkpoint(&good[..good.len() - 3]).is_err());
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode_checkpoint(&trailing), Err(FormatError::Malformed(_))));
}

#[test]
fn cli_runs_a_sweep_and_diagnoses_a_bnpe_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("root");
    let config = write_config(tmp.path(), &config_text(r#"["BNPE"]"#, "[256]", "[0]"));
    let bin = env!("CARGO_BIN_EXE_bsbi");

    let run = Command::new(bin).args(["run", "--config"]).arg(&config).env("BSBI_OUTPUT_ROOT", &root).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let out = root.join("out");
    assert!(out.join(MANIFEST_FILE).is_file(), "output root override ignored");

    let export = Command::new(bin).args(["export", "--manifest"]).arg(out.join(MANIFEST_FILE)).output().unwrap();
    assert!(export.status.success(), "{}", String::from_utf8_lossy(&export.stderr));
    assert!(out.join(COVERAGE_PLOT_FILE).is_file());

    let m = Manifest::load(&out.join(MANIFEST_FILE)).unwrap();
    let ck = out.join(&m.runs[0].artifacts.checkpoint);
    let diag = Command::new(bin)
        .args(["diagnose", "--task", "gaussian-linear", "--pairs", "30", "--samples", "128", "--checkpoint"])
        .arg(&ck)
        .output()
        .unwrap();
    assert!(diag.status.success(), "{}", String::from_utf8_lossy(&diag.stderr));
    let text = String::from_utf8(diag.stdout).unwrap();
    assert!(text.starts_with("algorithm,task,budget,seed,balancing_error,nominal_log_posterior\nBNPE,gaussian-linear,256,0,"));
    let (_, coverage) = text.split_once("\n\n").unwrap();
    assert!(coverage.starts_with("algorithm,task,budget,seed,level,coverage\n"));
    assert_eq!(coverage.lines().count(), 1 + 19);

    let wrong = Command::new(bin).args(["diagnose", "--task", "two-moons", "--checkpoint"]).arg(&ck).output().unwrap();
    assert!(!wrong.status.success());
}

#[test]
fn dataset_cache_is_reused() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let a = bsbi::cache::load_or_generate(dir, Task::Slcp, 128, 4, 16).unwrap();
    let path = bsbi::cache::cache_path(dir, Task::Slcp, 128, 4);
    let bytes = fs::read(&path).unwrap();
    let b = bsbi::cache::load_or_generate(dir, Task::Slcp, 128, 4, 16).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    assert_eq!(fs::read(&path).unwrap(), bytes);
    // The same cache is rejected for a different request.
    assert!(matches!(
        bsbi::cache::decode_dataset(&bytes, Task::Slcp, 128, 5, 16),
        Err(FormatError::HeaderMismatch(_))
    ));
}
