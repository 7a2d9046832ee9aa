//! File formats, experiment harness, plots and CLI support around
//! [`stfcal_core`].

pub mod bench;
pub mod config;
pub mod export;
pub mod plot;
pub mod urf;

pub use bench::{run_experiment, run_suite, ExperimentResult, SuiteOutcome};
pub use config::{ExperimentConfig, Mismatch, Mode, SuiteConfig};
