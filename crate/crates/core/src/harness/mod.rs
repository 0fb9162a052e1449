//! Scenario configuration, closed-loop simulation and metrics.

pub mod config;
pub mod metrics;
pub mod sim;

pub use config::{ControllerKind, ScenarioConfig};
pub use metrics::{LatencyStats, MetricsReport};
pub use sim::{
    bench_controller, build_controller, compare_controllers, evaluate, run_kind, run_scenario, run_unassisted,
    run_with_controller, simulate_and_evaluate, RunOutcome, Sample, TimeSeries,
};
