//! Experiment harness: configuration files, dataset caching, sweeps over
//! task × algorithm × budget × seed, checkpoints and plot-data export.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod export;
pub mod format;
pub mod output;
pub mod sweep;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ConfigError, ExperimentConfig};
pub use export::{export_plotdata, ExportError};
pub use format::FormatError;
pub use sweep::{run_sweep, Manifest, RunStatus, SweepError, SweepOptions, SweepReport};
