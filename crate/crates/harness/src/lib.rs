//! Experiment plumbing around `dspl-core`: CSV datasets, layered
//! configuration, solver runs and the corruption, batch and pace sweeps
//! behind the `dspl` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod config;
pub mod csvio;
pub mod sweep;

pub use config::{ExperimentConfig, ExperimentFile, Mode, Rho, SolverKind};
pub use csvio::{load_csv_dataset, write_dataset_csv, Batching, LoadError, LoadOptions};
pub use sweep::{
    run_solver, run_sweep_batches, run_sweep_corruption, run_sweep_lambda, SweepTable,
};
