//! Ridge solvers in kernel and feature space, conjugate gradient, and risk
//! evaluation.

mod cg;
mod ridge;
mod risk;

pub use cg::{cg_solve, cg_solve_with, multi_shift_cg, CgOptions, CgOutcome};
pub use ridge::{
    feature_ridge_fit, feature_ridge_path, krr_fit, krr_fit_path, krr_fit_with, krr_predict, krr_predict_many,
    RidgeFit, RidgeOptions, SolveMethod, DIRECT_MAX_DIM,
};
pub use risk::{
    gram_concentration_check, projection_residual, projection_residual_mc, read_reports_file, risk_estimate,
    risk_from_predictions, write_reports, write_reports_file, RiskEstimate, RiskReport, REPORT_COLUMNS,
};

pub use crate::linalg::{FnOperator, LinearOperator, PackedSymmetric, Shifted};
