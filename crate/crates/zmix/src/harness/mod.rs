//! Scenario harness: configuration, workload generation, the event-driven
//! engine, and reporting.

pub mod config;
pub mod engine;
pub mod report;
pub mod workload;

pub use config::{ConfigError, MixnetConfig, ScenarioConfig, ValueDist};
pub use engine::{run_scenario, RunOutput};
pub use report::{compare, sweep_cover_rate, DeltaReport, MetricsReport, SweepReport};
