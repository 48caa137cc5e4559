//! Experiment driver for the `coordbf` library: TOML configuration, seeded
//! Monte-Carlo sweeps, CSV/JSON output, brute-force oracles and the
//! acceptance checks.

pub mod config;
pub mod oracles;
pub mod records;
pub mod runner;
pub mod validation;

pub use config::{ConfigError, Experiment, ExperimentConfig, GridPoint, Scheme};
pub use records::{ExperimentRecord, Summary};
pub use runner::{run_experiment, RunOutput};
