//! Configuration, experiment orchestration and reporting on top of the
//! `mckean` estimators.

pub mod config;
pub mod error;
pub mod experiment;
pub mod experiments;
pub mod report;

pub use config::ConfigDoc;
pub use error::{CliError, Result};
pub use experiment::ExperimentConfig;
