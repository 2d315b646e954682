//! Experiment orchestration for clasr: configuration, the sequential
//! training loop under the no-replay rule, evaluation, persistence and
//! plot-data export.

pub mod cli;
pub mod config;
pub mod error;
pub mod record;
pub mod report;
pub mod run;
pub mod source;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use record::RunRecord;
pub use run::{run_experiment, run_with_source};
