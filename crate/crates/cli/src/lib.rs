//! Front end for hydrolim: configuration files, persisted trajectories,
//! fields and reports, and N-sweeps.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod sweep;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
