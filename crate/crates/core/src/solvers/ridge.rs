//! Kernel ridge regression and ridge regression on explicit features.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cg::{cg_solve_with, multi_shift_cg, CgOptions, CgOutcome};
use crate::error::{domain, shape, Error, Result};
use crate::features::{FeatureMatrix, GramOperator, NormalOperator};
use crate::kernels::{kernel_cross_apply, KernelSpec};
use crate::linalg::{CholeskyFactor, LinearOperator, PackedSymmetric};

/// Systems up to this size are factorized; larger ones use CG.
pub const DIRECT_MAX_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RidgeOptions {
    pub cg_tol: f64,
    pub max_iter: usize,
    /// Largest system solved by factorization when no method is forced.
    pub direct_max_dim: usize,
    /// Bytes allowed for an explicit normal or Gram matrix.
    pub memory_budget_bytes: usize,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            max_iter: 20_000,
            direct_max_dim: DIRECT_MAX_DIM,
            memory_budget_bytes: crate::features::DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// A solved ridge problem.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    /// Dual coefficients `â` for KRR, primal weights `a` for features.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub method: SolveMethod,
    /// CG iterations; zero for factorizations.
    pub iterations: usize,
    /// Relative residual of the linear system that was solved.
    pub residual: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("ridge parameter must be finite and >= 0, got {lambda}")))
    }
}

fn rel_residual<A: LinearOperator + ?Sized>(a: &A, shift: f64, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    a.apply(x, &mut ax);
    let num: f64 = b.iter().zip(&ax).zip(x).map(|((bi, ai), xi)| (bi - ai - shift * xi).powi(2)).sum();
    let den: f64 = b.iter().map(|v| v * v).sum();
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Cholesky solve of `(A + λI) x = b` for a dense symmetric `A`.
fn direct_solve(a: &DMatrix<f64>, lambda: f64, b: &[f64]) -> Result<RidgeFit> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    let chol = CholeskyFactor::new(m).ok_or_else(|| Error::Solver {
        reason: format!("matrix + {lambda:e} I is not numerically positive definite"),
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let x = chol.solve(b);
    let residual = rel_residual(a, lambda, &x, b);
    Ok(RidgeFit { coefficients: x, lambda, method: SolveMethod::Direct, iterations: 0, residual })
}

fn from_outcome(out: CgOutcome, lambda: f64) -> RidgeFit {
    RidgeFit { coefficients: out.x, lambda, method: SolveMethod::Cg, iterations: out.iterations, residual: out.residual }
}

/// Solves `(H + λI) â = y`.
pub fn krr_fit(h: &DMatrix<f64>, y: &[f64], lambda: f64, method: SolveMethod) -> Result<RidgeFit> {
    krr_fit_with(h, y, lambda, method, &RidgeOptions::default())
}

pub fn krr_fit_with(
    h: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    method: SolveMethod,
    opts: &RidgeOptions,
) -> Result<RidgeFit> {
    check_lambda(lambda)?;
    if h.nrows() != h.ncols() || h.nrows() != y.len() {
        return Err(shape(format!("kernel {}x{} with {} labels", h.nrows(), h.ncols(), y.len())));
    }
    match method {
        SolveMethod::Direct => direct_solve(h, lambda, y),
        SolveMethod::Cg => {
            let op = crate::linalg::Shifted { inner: h, shift: lambda };
            let out = cg_solve_with(&op, y, CgOptions { tol: opts.cg_tol, max_iter: opts.max_iter, precondition: true })?;
            Ok(from_outcome(out, lambda))
        }
    }
}

/// KRR for every `λ` in `lambdas` on a packed kernel: factorization per `λ`
/// up to `direct_max_dim`, a single multi-shift CG run above it.
pub fn krr_fit_path(h: &PackedSymmetric, y: &[f64], lambdas: &[f64], opts: &RidgeOptions) -> Result<Vec<Result<RidgeFit>>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    if h.n() != y.len() {
        return Err(shape(format!("kernel of size {} with {} labels", h.n(), y.len())));
    }
    if h.n() <= opts.direct_max_dim {
        let dense = h.to_dense();
        return Ok(lambdas.iter().map(|&l| direct_solve(&dense, l, y)).collect());
    }
    Ok(multi_shift_cg(h, y, lambdas, opts.cg_tol, opts.max_iter)
        .into_iter()
        .zip(lambdas)
        .map(|(r, &l)| r.map(|o| from_outcome(o, l)))
        .collect())
}

/// `f̂(x) = Σ_i â_i h(<x, x_i>/ρ²)` at each row of `x_test`.
pub fn krr_predict(
    fit: &RidgeFit,
    spec: &KernelSpec,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    radius_sq: f64,
) -> Result<Vec<f64>> {
    let coef = DMatrix::from_column_slice(fit.coefficients.len(), 1, &fit.coefficients);
    Ok(kernel_cross_apply(spec, x_train, x_test, &coef, radius_sq)?.as_slice().to_vec())
}

/// Predictions of several fits at once (one kernel pass).
pub fn krr_predict_many(
    fits: &[&RidgeFit],
    spec: &KernelSpec,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    radius_sq: f64,
) -> Result<Vec<Vec<f64>>> {
    if fits.is_empty() {
        return Ok(Vec::new());
    }
    let n = x_train.nrows();
    let mut coef = DMatrix::zeros(n, fits.len());
    for (c, f) in fits.iter().enumerate() {
        if f.coefficients.len() != n {
            return Err(shape(format!("fit has {} coefficients for {n} training points", f.coefficients.len())));
        }
        coef.column_mut(c).copy_from_slice(&f.coefficients);
    }
    let out = kernel_cross_apply(spec, x_train, x_test, &coef, radius_sq)?;
    Ok((0..fits.len()).map(|c| out.column(c).iter().copied().collect()).collect())
}

/// Minimizes `‖y − Φa‖² + λ‖a‖²`.
pub fn feature_ridge_fit(phi: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<RidgeFit> {
    feature_ridge_path(phi, y, &[lambda], &RidgeOptions::default())?.pop().expect("one lambda")
}

/// Feature ridge along a `λ` path. Works on the smaller of the primal
/// `ΦᵀΦ + λI` (p × p) and dual `ΦΦᵀ + λI` (n × n) systems; the dual
/// solution is mapped back as `a = Φᵀ α`. Small systems are factorized,
/// large ones are solved matrix-free by multi-shift CG.
pub fn feature_ridge_path(
    phi: &FeatureMatrix,
    y: &[f64],
    lambdas: &[f64],
    opts: &RidgeOptions,
) -> Result<Vec<Result<RidgeFit>>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let (n, p) = (phi.n_rows(), phi.n_features());
    if y.len() != n {
        return Err(shape(format!("{n} feature rows with {} labels", y.len())));
    }
    let primal = p <= n;
    let dim = p.min(n);
    let direct = dim <= opts.direct_max_dim && dim * dim * 8 <= opts.memory_budget_bytes;

    if primal {
        let rhs = phi.apply_transpose(y);
        if direct {
            let a = phi.normal_matrix(opts.memory_budget_bytes)?;
            Ok(lambdas.iter().map(|&l| direct_solve(&a, l, &rhs)).collect())
        } else {
            let op = NormalOperator(phi);
            Ok(multi_shift_cg(&op, &rhs, lambdas, opts.cg_tol, opts.max_iter)
                .into_iter()
                .zip(lambdas)
                .map(|(r, &l)| r.map(|o| from_outcome(o, l)))
                .collect())
        }
    } else {
        let duals: Vec<Result<RidgeFit>> = if direct {
            let g = phi.gram(opts.memory_budget_bytes)?;
            lambdas.iter().map(|&l| direct_solve(&g, l, y)).collect()
        } else {
            let op = GramOperator(phi);
            multi_shift_cg(&op, y, lambdas, opts.cg_tol, opts.max_iter)
                .into_iter()
                .zip(lambdas)
                .map(|(r, &l)| r.map(|o| from_outcome(o, l)))
                .collect()
        };
        Ok(duals
            .into_iter()
            .map(|r| {
                r.map(|mut fit| {
                    fit.coefficients = phi.apply_transpose(&fit.coefficients);
                    fit
                })
            })
            .collect())
    }
}
