//! Experiment runner: configuration, seeding, orchestration and result files.

pub mod commands;
pub mod config;
pub mod io;
pub mod selftest;

pub use commands::{
    cmd_contraction, cmd_fcs, cmd_metric, cmd_process, ContractionReport, FcsOutcome, FcsSummary, MetricReport,
    ProcessOutcome, ProcessSummary,
};
pub use config::{BirkhoffPlan, CovariancePlan, DriverConfig, ExperimentConfig, FcsPlan};
pub use io::{verify_manifest, write_atomic, OutputDir, RunManifest, SuiteResult};
pub use selftest::{cmd_selftest, Level, SelftestReport};
