//! Configuration-driven experiment harness over the `lmo-core` simulator.
//!
//! Loads JSON configs, runs every (method, seed) cell in parallel with failure
//! isolation, and emits deterministic JSON or CSV reports.

pub mod config;
mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use lmo_core as core;

pub use config::{load_analysis_config, load_config, load_sweep_config, AnalysisConfig, ExperimentConfig, SweepConfig};
pub use error::{HarnessError, Result};
pub use harness::{run_experiment, run_greedy, run_similarity_study, run_sweep, ExperimentOutcome};
pub use report::{emit_report, render_report, ExperimentReport, Format};
