//! Experiment orchestration: configs, batch commands, plots and self-tests.

pub mod commands;
pub mod config;
pub mod io;
pub mod selftest;
pub mod svg;

pub use commands::{compare, estimate, generate_data, selftest as run_selftest, sweep_naive};
pub use config::{Experiment, ExperimentConfig, SystemSpec, CONFIG_VERSION};
