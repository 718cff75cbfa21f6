//! Cohorts, metrics, scenario sweeps and reports.

pub mod cohort;
pub mod metrics;
pub mod report;
pub mod sweep;

pub use cohort::{build_dataset, dataset_from_samples, snr_for_distance, CohortSpec, Dataset, Pattern, Sample};
pub use metrics::{compute_metrics, rate_error_stats, MetricsReport, Scenario, StdMode};
pub use report::{emit_reports, reports_csv, ReportPaths};
pub use sweep::{run_cell, run_scenario_sweep, ScenarioConfig};
