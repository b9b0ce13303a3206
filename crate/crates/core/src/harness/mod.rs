//! Scenario files, Monte Carlo validation, baseline comparisons, latency
//! benchmarks and their output formats.

mod bench;
mod classify;
mod compare;
pub mod io;
mod scenario;
pub mod stats;
mod validation;

pub use bench::{random_halfspaces, run_benchmark, BenchConfig, BenchRecord, MIN_CHECKS};
pub use classify::{classify_trial, Classification, OtherReason, TrialOutcome, TrialTimeline};
pub use compare::{
    monitor_trace, run_comparison, run_comparison_sweep, true_time_to_unsafe, ComparisonRun, ComparisonSetup,
    ComparisonSummary,
};
pub use scenario::{
    load_unsafe_set, operating_point, DetectionRule, InitialKind, InitialState, LimitSide, MonitorSpec, RunSpec,
    Scenario, Span, ValidationTemplate, SETTLE_STEPS,
};
pub use validation::{
    draw_trial, run_attacked_sensor_sweep, run_trial, run_validation_sweep, trial_seed, Counts, Rate, RateRow,
    SensorRow, TrialSetup, ValidationContext, ValidationReport,
};
