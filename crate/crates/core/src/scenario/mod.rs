//! Fixture loading, scripted scenarios and report output.

pub mod fixtures;
pub mod report;
pub mod runner;
pub mod script;

use thiserror::Error;

pub use fixtures::{load_fixtures, FixtureSet, LoadSummary};
pub use report::write_bundle;
pub use runner::{run_scenario, Bundle, DecisionRecord, RunConfig, Runner, Summary, VerdictRecord, SCENARIO_START};
pub use script::{parse_script, Command, Expect};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("{file} line {line}: {message}")]
    SchemaViolation { file: String, line: usize, message: String },
    #[error("script step {step}: {message}")]
    Script { step: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
}
