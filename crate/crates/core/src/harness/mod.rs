//! Configuration, experiment dispatch, verdicts and file output for the CLI.

pub mod coeff;
pub mod config;
pub mod run;
pub mod steady;

pub use config::{Experiment, ExperimentConfig, ModelSpec, Tolerances};
pub use run::{run, run_to_dir, RunOutcome};
