//! Experiment driver: configuration, sweeps and result files.

pub mod config;
pub mod io;
pub mod run;

pub use config::SweepConfig;
pub use run::{run, validate, RunOptions, RunReport};
