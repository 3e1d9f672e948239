//! Experiment configuration, metrics and the work behind each CLI command.

mod commands;
mod config;
mod run;
mod sweep;

pub use commands::{
    cmd_run, cmd_schedule, cmd_sweep, cmd_verify, gen_data, gen_mdp, split_coverage_check, CoverageCheck, GenMdpSummary, RunSummary,
    ScheduleSummary, SweepSummary, METRICS_FILE, TRACE_FILE,
};
pub use config::{behaviors_for, BehaviorSpec, ExperimentConfig, RunConfig, RunInput, SweepAxes};
pub use run::{
    execute_run, hyper_for, payload_per_sync, run_generated, write_metrics_csv, write_sync_csv, CellSettings, MetricsRow, RunLabels,
    RunResult, SyncMetrics, GAP_FLOOR, SYNC_COLUMNS,
};
pub use sweep::{require_some_success, run_sweep, sweep_cells, write_sweep, RunRecord, SummaryRow, SweepResult};
