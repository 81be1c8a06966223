//! Scenario ingestion, command dispatch and result serialisation for the
//! `cpforce` binary.

pub mod commands;
pub mod log;
pub mod scenario;
pub mod table;
pub mod units;

pub use commands::{run, Command, RunError};
pub use scenario::{Model, Scenario, ValidationError};
