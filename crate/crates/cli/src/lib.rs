//! Configuration, training runs, sweeps and metric summaries for the `dsac`
//! command-line tool.

pub mod config;
pub mod metrics;
pub mod summarize;
pub mod sweep;
pub mod train;

pub use config::{EnvKind, Precision, Preset, RunConfig};
pub use metrics::{mean_stderr, read_metrics, MetricsRecord};
pub use summarize::summarize;
pub use sweep::{grid, run_sweep, SweepCell};
pub use train::{make_env, run_training, RunSummary};
