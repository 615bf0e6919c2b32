//! Experiment configuration files.
//!
//! ```toml
//! [sweep]
//! tasks = ["gaussian-linear"]
//! algorithms = ["NPE", "BNPE"]
//! budgets = [1024]
//! seeds = [0, 1, 2, 3, 4]
//! output = "runs/gl"
//!
//! [train]
//! max_epochs = 100
//!
//! [diagnostics]
//! test_pairs = 1000
//! tie_break = "strict"
//! ```

use std::path::{Path, PathBuf};

use bsbi_core::diagnostics::{DiagnosticConfig, TieBreak};
use bsbi_core::objectives::{Algorithm, TrainConfig};
use bsbi_core::simulators::{Task, MIN_BUDGET};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Overrides the directory that relative `output` paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "BSBI_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    sweep: RawSweep,
    #[serde(default)]
    train: TrainOverrides,
    #[serde(default)]
    diagnostics: DiagnosticSettings,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    tasks: Vec<String>,
    algorithms: Vec<String>,
    #[serde(default = "default_budgets")]
    budgets: Vec<usize>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    output: PathBuf,
}

fn default_budgets() -> Vec<usize> {
    vec![256, 1024, 4096, 16384]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Optional replacements for [`TrainConfig`] defaults. `lambda` only applies
/// to balanced algorithms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr_factor: Option<f64>,
    pub stop_after: Option<usize>,
    pub min_lr: Option<f64>,
    pub classifier_depth: Option<usize>,
    pub classifier_hidden: Option<usize>,
    pub flow_transforms: Option<usize>,
    pub flow_hidden: Option<usize>,
    pub flow_depth: Option<usize>,
    pub flow_bins: Option<usize>,
    pub flow_bound: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, algorithm: Algorithm) -> TrainConfig {
        let mut c = TrainConfig::new(algorithm);
        if algorithm.is_balanced() {
            set(&mut c.lambda, self.lambda);
        }
        set(&mut c.gamma, self.gamma);
        set(&mut c.k, self.k);
        set(&mut c.lr, self.lr);
        set(&mut c.batch, self.batch);
        set(&mut c.max_epochs, self.max_epochs);
        set(&mut c.patience, self.patience);
        set(&mut c.lr_factor, self.lr_factor);
        c.stop_after = self.stop_after.or(c.stop_after);
        c.min_lr = self.min_lr.or(c.min_lr);
        set(&mut c.classifier_depth, self.classifier_depth);
        set(&mut c.classifier_hidden, self.classifier_hidden);
        set(&mut c.flow.transforms, self.flow_transforms);
        set(&mut c.flow.hidden, self.flow_hidden);
        set(&mut c.flow.depth, self.flow_depth);
        set(&mut c.flow.bins, self.flow_bins);
        set(&mut c.flow.bound, self.flow_bound);
        c
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreakSetting {
    Strict,
    Randomized,
}

impl From<TieBreakSetting> for TieBreak {
    fn from(t: TieBreakSetting) -> Self {
        match t {
            TieBreakSetting::Strict => TieBreak::Strict,
            TieBreakSetting::Randomized => TieBreak::Randomized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticSettings {
    pub test_pairs: usize,
    pub samples: usize,
    pub grid_resolution: usize,
    pub tie_break: TieBreakSetting,
}

impl Default for DiagnosticSettings {
    fn default() -> Self {
        DiagnosticSettings { test_pairs: 1000, samples: 1024, grid_resolution: 256, tie_break: TieBreakSetting::Strict }
    }
}

impl DiagnosticSettings {
    pub fn for_task(&self, task: Task) -> DiagnosticConfig {
        let mut c = DiagnosticConfig::for_task(task);
        c.samples = self.samples;
        c.grid_resolution = self.grid_resolution;
        c.tie = self.tie_break.into();
        c
    }
}

/// A validated sweep description. Everything except `output` feeds the
/// config hash recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(serialize_with = "names")]
    pub tasks: Vec<Task>,
    #[serde(serialize_with = "names")]
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainOverrides,
    pub diagnostics: DiagnosticSettings,
    #[serde(skip)]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let tasks = raw
            .sweep
            .tasks
            .iter()
            .map(|t| t.parse::<Task>().map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let algorithms = raw
            .sweep
            .algorithms
            .iter()
            .map(|a| a.parse::<Algorithm>().map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = ExperimentConfig {
            tasks,
            algorithms,
            budgets: raw.sweep.budgets,
            seeds: raw.sweep.seeds,
            train: raw.train,
            diagnostics: raw.diagnostics,
            output: raw.sweep.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `output` is resolved against
    /// `$BSBI_OUTPUT_ROOT` when set, otherwise against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text)?;
        let root = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(r) => PathBuf::from(r),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.output = root.join(&cfg.output);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tasks.is_empty() || self.algorithms.is_empty() || self.budgets.is_empty() || self.seeds.is_empty() {
            return Err(invalid("tasks, algorithms, budgets and seeds must all be non-empty"));
        }
        if let Some(b) = self.budgets.iter().find(|b| !b.is_power_of_two() || **b < MIN_BUDGET) {
            return Err(invalid(format!("budget {b} is not a power of two ≥ {MIN_BUDGET}")));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("budgets must be strictly ascending"));
        }
        if has_duplicates(&self.tasks) || has_duplicates(&self.algorithms) || has_duplicates(&self.seeds) {
            return Err(invalid("tasks, algorithms and seeds must not repeat"));
        }
        if self.diagnostics.test_pairs < 2 || self.diagnostics.samples == 0 {
            return Err(invalid("diagnostics need at least 2 test pairs and 1 sample"));
        }
        for &a in &self.algorithms {
            self.train.apply(a).validate().map_err(|e| invalid(format!("{a}: {e}")))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn names<T: std::fmt::Display, S: serde::Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(ToString::to_string))
}

fn has_duplicates<T: Ord + Clone>(v: &[T]) -> bool {
    let mut s = v.to_vec();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}
