//! Config-driven sweeps and the reports built from them.

pub mod collapse;
pub mod config;
pub mod runners;
pub mod selftest;
pub mod theory;

pub use collapse::{collapse_summaries, interpolate, max_vertical_gap, run_collapse_check, CollapseSummary};
pub use config::{ExperimentConfig, ExperimentKind, Grid, GridScale, Method, ModelGrid, TheorySettings};
pub use runners::{
    evaluate_point, grid_points, run_experiment, run_grid, run_krr_staircase, run_nn_vs_krr, run_rfnt_approximation,
    target_for, GridPoint, RunSummary,
};
pub use selftest::{selftest, SuiteResult};
pub use theory::{run_theory_report, write_theory, write_theory_file, TheoryRow};
