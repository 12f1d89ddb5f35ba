//! Scenario files, run orchestration and reports for the `macgame` CLI.

pub mod error;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use run::{run, run_batch, Overrides, RunReport};
pub use scenario::{parse_scenario, ScenarioFile};
