//! Configuration, scenario library, experiment orchestration and report files.

pub mod config;
pub mod experiment;
pub mod io;
pub mod scenarios;

pub use config::{ExperimentConfig, Resolved, Tolerances};
pub use experiment::{run_experiment, run_resolved, Check, RunReport, SeedReport, SeedResult, TrackingDeviations};
pub use scenarios::{scenario, scenario_library};
