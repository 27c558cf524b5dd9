//! Scenario files, runs, and the reports built on top of them.

pub mod config;
pub mod plot;
pub mod run;
pub mod verify;

pub use config::{ScenarioConfig, ScenarioTag};
pub use plot::{emit_plot_data, moving_average, parse_metrics, plot_rows, MetricsSeries};
pub use run::{
    apply_overrides, build_env, build_schedule, execute, metrics_header, output_path, run_scenario, RunOutput,
    RunOverrides, RunSummary, ScenarioEnv, write_file, METRICS_SCHEMA, OUTPUT_DIR_ENV,
};
pub use verify::{consensus_check, verify_fixed_point, ConsensusCheck, FixedPointCheck, DEFAULT_TOLERANCE};
