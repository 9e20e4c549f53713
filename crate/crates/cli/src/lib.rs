//! Experiment harness for curved label-space losses: configuration,
//! training with per-epoch metric regeneration, paired comparisons and
//! metric reports.

pub mod compare;
pub mod config;
pub mod error;
pub mod report;
pub mod train;

pub use compare::{run_compare, CompareReport};
pub use config::{Cadence, ConfigOverrides, DataSource, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use report::{metric_report, MetricReport};
pub use train::{resume_train, run_in_memory, run_train, EpochReport, RunCheckpoint, RunOutcome, Session};
