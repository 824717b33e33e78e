//! Experiment configuration, training, evaluation, metrics and the CLI.

mod cli;
mod config;
mod metrics;
mod train;

pub use cli::{exit_code, mode_label, run_cli, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};
pub use config::{DatasetSection, ExperimentConfig, ModelSection, OutputSection, ProfilingSection, TrainingSection};
pub use metrics::{
    harmonic_mean, metrics_header, write_metrics_csv, write_summary_json, EpochMetrics, HarmonicMean, RunMetrics,
    RunSummary, METRICS_FORMAT,
};
pub use train::{evaluate, evaluate_with, train, Experiment, StepLosses};
