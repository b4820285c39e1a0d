//! Experiment harness: config parsing, the stage pipeline, report files and
//! the acceptance suite. The `sdelab` binary is a thin CLI over this crate.

pub mod acceptance;
pub mod bundle;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use bundle::{ReportBundle, Stage, OUTSIDE_COND0};
pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use report::{write_report, ReportFormat};
pub use run::{run_experiment, run_stages, RunPlan};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SINGULAR_SDE_THREADS";
