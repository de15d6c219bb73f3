//! Experiment runner: configs, seeded runs, metrics files, summaries,
//! comparison tables and plot series.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use compare::{compare_runs, format_table, ComparisonRow};
pub use config::{Algorithm, EnvironmentConfig, EnvironmentPreset, ExperimentConfig, LearningConfig, MetricsConfig};
pub use metrics::{read_metrics, write_metrics, MetricsRecord, MetricsTracker, MetricsWriter, Thinning};
pub use plot::{emit_plot_series, write_series};
pub use run::{run_experiment, run_seed, ExperimentSummary, RunSummary};
