//! Config-driven experiment runner for soliton-lab.

pub mod config;
pub mod error;
pub mod expect;
pub mod jobs;
pub mod record;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use record::RunRecord;
