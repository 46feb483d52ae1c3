//! Scenario loading, execution and reporting.

pub mod config;
pub mod report;
pub mod run;

pub use config::{load_scenario, ConfigError, Scenario, ScenarioConfig};
pub use report::{report_check, CheckOutcome, Criteria, RunReport};
pub use run::{run, run_to_dir, RunError};

/// The two-subsystem scenario shipped with the crate.
pub const FLAGSHIP: &str = include_str!("../../scenarios/flagship.toml");

pub fn flagship() -> ScenarioConfig {
    ScenarioConfig::from_toml(FLAGSHIP).expect("bundled scenario parses")
}
