//! Disturbances, experiments, run records, plots and configuration.

pub mod compare;
pub mod config;
pub mod disturbance;
pub mod experiment;
pub mod plots;
pub mod record;

pub use compare::{compare_runs, CompareSummary, PhaseStats};
pub use config::{ExperimentConfig, MatrixSpec, ObservabilityChoice, ResolvedExperiment, PRESET_NAMES};
pub use disturbance::{generate_disturbances, square_wave, ComponentSpec};
pub use experiment::{run_experiment, run_resolved, theory_run, window_membership, ExperimentOutput};
pub use plots::emit_plots;
pub use record::{read_run, write_run, RunMeta, RunRecord, RunRow, RunStatus};
