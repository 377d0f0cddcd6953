//! Experiment harness: deterministic scenario generation, Monte Carlo
//! sweeps over noise levels and network sizes, and machine-readable CSV/JSON
//! outputs.
//!
//! Every cell of an experiment derives its random stream from
//! `(master seed, scenario tag, cell, trial)`, so results are reproducible
//! and independent of how cells are scheduled across threads.

pub mod harness;
pub mod scenarios;

pub use harness::{run_experiment, ExperimentConfig, Scenario, Summary};
