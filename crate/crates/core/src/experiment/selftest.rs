//! Fast invariant checks bundled with the binary.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use super::collapse::{interpolate, max_vertical_gap};
use crate::activation::{Activation, ActivationSpec};
use crate::features::{rf_features, sample_weights};
use crate::geometry::{make_synthetic_target, sample_dataset, SphereModelParams};
use crate::harmonics::{dim_spherical_harmonics, gegenbauer_eval, gegenbauer_project};
use crate::kernels::{kernel_gegenbauer_coefficients, kernel_matrix, KernelSpec};
use crate::nn::{nn_gradient, nn_init};
use crate::rng::{self, stream};
use crate::solvers::{cg_solve, krr_fit, multi_shift_cg, SolveMethod};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: usize,
    pub failed: usize,
    pub messages: Vec<String>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

type Check = (&'static str, fn() -> Result<(), String>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol})"))
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn harmonic_dims() -> Result<(), String> {
    close(dim_spherical_harmonics(3, 2).map_err(e)? as f64, 5.0, 0.0, "B(3,2)")?;
    close(dim_spherical_harmonics(100, 1).map_err(e)? as f64, 100.0, 0.0, "B(100,1)")?;
    close(dim_spherical_harmonics(10, 2).map_err(e)? as f64, 54.0, 0.0, "B(10,2)")
}

fn gegenbauer_normalization() -> Result<(), String> {
    for d in [3, 10, 200] {
        for k in 0..6 {
            close(gegenbauer_eval(d, k, d as f64), 1.0, 1e-12, "Q_k(d)")?;
        }
    }
    Ok(())
}

fn gegenbauer_orthogonality() -> Result<(), String> {
    let d = 12;
    let c = gegenbauer_project(d, |t| gegenbauer_eval(d, 3, t), 5).map_err(e)?;
    let b = dim_spherical_harmonics(d, 3).map_err(e)? as f64;
    for (k, v) in c.iter().enumerate() {
        let want = if k == 3 { 1.0 / b } else { 0.0 };
        close(*v, want, 1e-12, &format!("projection of Q_3 onto Q_{k}"))?;
    }
    Ok(())
}

fn relu_kernel_values() -> Result<(), String> {
    let spec = KernelSpec::rf(ActivationSpec::new(Activation::Relu));
    close(spec.eval(1.0).map_err(e)?, 0.5, 1e-12, "h_RF(1)")?;
    close(spec.eval(0.0).map_err(e)?, 1.0 / (2.0 * std::f64::consts::PI), 1e-12, "h_RF(0)")
}

fn identity_kernel_coefficients() -> Result<(), String> {
    let spec = KernelSpec::rf(ActivationSpec::new(Activation::Identity));
    let c = kernel_gegenbauer_coefficients(&spec, 30, 3).map_err(e)?;
    close(c.products[1], 1.0, 1e-12, "B λ_1")?;
    ensure(c.products[0].abs() < 1e-12 && c.products[2].abs() < 1e-12, || format!("{:?}", c.products))
}

fn relu_coefficients_near_limit() -> Result<(), String> {
    let spec = KernelSpec::rf(ActivationSpec::new(Activation::Relu));
    let lim = spec.series_coefficients(2).map_err(e)?;
    let c = kernel_gegenbauer_coefficients(&spec, 1000, 2).map_err(e)?;
    for k in 0..=2 {
        close(c.products[k], lim[k], 0.1 * lim[k], &format!("k = {k}"))?;
    }
    Ok(())
}

fn sample_radii() -> Result<(), String> {
    let params = SphereModelParams::new(64, 0.5, 0.3, 0.0, 3).map_err(e)?;
    let target = make_synthetic_target(params.d0(), &[2, 3], &mut stream(3, rng::domain::TARGET, 0)).map_err(e)?;
    let ds = sample_dataset(&params, &target, 200).map_err(e)?;
    for row in ds.x.row_iter() {
        close(row.norm_squared(), params.radius_sq(), 1e-8 * params.radius_sq(), "squared norm")?;
    }
    let mean_sq = ds.y.iter().map(|v| v * v).sum::<f64>() / ds.y.len() as f64;
    ensure(mean_sq > 0.3 * target.norm_sq() && mean_sq < 3.0 * target.norm_sq(), || {
        format!("mean y² {mean_sq} far from ‖f‖² {}", target.norm_sq())
    })
}

fn spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = stream(seed, rng::domain::ORACLE, 0);
    let g = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(n, n) * 0.1
}

fn cg_matches_direct() -> Result<(), String> {
    let a = spd(40, 1);
    let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
    let x = cg_solve(&a, &b, 1e-12, 2000).map_err(e)?;
    let direct = a.clone().cholesky().ok_or("not SPD")?.solve(&nalgebra::DVector::from_column_slice(&b));
    let gap = x.iter().zip(direct.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    ensure(gap < 1e-8, || format!("max gap {gap}"))
}

fn multi_shift_matches_single() -> Result<(), String> {
    let a = spd(30, 2);
    let b: Vec<f64> = (0..30).map(|i| 1.0 + (i % 3) as f64).collect();
    let shifts = [1e-3, 0.1, 10.0];
    let outs = multi_shift_cg(&a, &b, &shifts, 1e-12, 2000);
    for (s, out) in shifts.iter().zip(outs) {
        let out = out.map_err(e)?;
        let mut m = a.clone();
        for i in 0..30 {
            m[(i, i)] += s;
        }
        let direct = m.cholesky().ok_or("not SPD")?.solve(&nalgebra::DVector::from_column_slice(&b));
        let gap = out.x.iter().zip(direct.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure(gap < 1e-7, || format!("shift {s}: gap {gap}"))?;
    }
    Ok(())
}

fn krr_interpolates() -> Result<(), String> {
    let h = spd(25, 3);
    let y: Vec<f64> = (0..25).map(|i| (i as f64 * 0.7).cos()).collect();
    let fit = krr_fit(&h, &y, 1e-10, SolveMethod::Direct).map_err(e)?;
    let pred = &h * nalgebra::DVector::from_column_slice(&fit.coefficients);
    let gap = pred.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    ensure(gap < 1e-6, || format!("training residual {gap}"))
}

fn rf_gram_concentrates() -> Result<(), String> {
    let d = 16;
    let act = Arc::new(ActivationSpec::new(Activation::Relu));
    let params = SphereModelParams::new(d, 0.5, 0.0, 0.0, 5).map_err(e)?;
    let target = make_synthetic_target(params.d0(), &[2], &mut stream(5, rng::domain::TARGET, 0)).map_err(e)?;
    let x = sample_dataset(&params, &target, 8).map_err(e)?.x;
    let n = 4000;
    let w = sample_weights(n, d, 5).map_err(e)?;
    let phi = rf_features(&w, &x, &act, params.radius_sq()).map_err(e)?;
    let emp = phi.gram(crate::features::DEFAULT_MEMORY_BUDGET).map_err(e)? / n as f64;
    let lim = kernel_matrix(&KernelSpec::rf(act), &x, None, params.radius_sq()).map_err(e)?;
    let gap = (emp - lim).abs().max();
    ensure(gap < 0.1, || format!("max entry gap {gap}"))
}

fn gradient_matches_finite_differences() -> Result<(), String> {
    let d = 6;
    let act = Arc::new(ActivationSpec::new(Activation::Tanh));
    let net = nn_init(5, d, act, d as f64, 11).map_err(e)?;
    let mut r = stream(11, rng::domain::ORACLE, 1);
    let x = DMatrix::from_fn(20, d, |_, _| r.gen_range(-1.0..1.0));
    let y: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
    let l2 = 1e-3;
    let g = nn_gradient(&net, &x, &y, l2).map_err(e)?;
    let h = 1e-5;
    for (i, j) in [(0, 0), (2, 3), (4, 5)] {
        let mut p = net.clone();
        p.w[(i, j)] += h;
        let mut m = net.clone();
        m.w[(i, j)] -= h;
        let fd = (nn_gradient(&p, &x, &y, l2).map_err(e)?.loss - nn_gradient(&m, &x, &y, l2).map_err(e)?.loss) / (2.0 * h);
        let an = g.w[(i, j)];
        ensure((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), || format!("w[{i},{j}]: fd {fd} vs {an}"))?;
    }
    Ok(())
}

fn collapse_identical_curves() -> Result<(), String> {
    let c = vec![(0.5, 1.0), (1.0, 0.6), (1.5, 0.3)];
    let (gap, _) = max_vertical_gap(&[c.clone(), c.clone()]).map_err(e)?;
    close(gap, 0.0, 0.0, "gap")?;
    close(interpolate(&c, 1.5).unwrap_or(f64::NAN), 0.3, 0.0, "endpoint")
}

const SUITES: &[(&str, &[Check])] = &[
    (
        "harmonics",
        &[
            ("dimensions", harmonic_dims),
            ("normalization", gegenbauer_normalization),
            ("orthogonality", gegenbauer_orthogonality),
        ],
    ),
    (
        "kernels",
        &[
            ("relu_values", relu_kernel_values),
            ("identity_coefficients", identity_kernel_coefficients),
            ("relu_limit", relu_coefficients_near_limit),
        ],
    ),
    ("geometry", &[("radii_and_energy", sample_radii)]),
    (
        "solvers",
        &[("cg_vs_direct", cg_matches_direct), ("multi_shift", multi_shift_matches_single), ("krr_interpolation", krr_interpolates)],
    ),
    ("features", &[("rf_gram", rf_gram_concentrates)]),
    ("nn", &[("gradient_check", gradient_matches_finite_differences)]),
    ("experiment", &[("collapse_identity", collapse_identical_curves)]),
];

/// Runs every suite; never panics on a failed check.
pub fn selftest() -> Vec<SuiteResult> {
    SUITES
        .iter()
        .map(|(name, checks)| {
            let mut res = SuiteResult { name: name.to_string(), passed: 0, failed: 0, messages: vec![] };
            for (check, f) in checks.iter() {
                match std::panic::catch_unwind(f) {
                    Ok(Ok(())) => res.passed += 1,
                    Ok(Err(m)) => {
                        res.failed += 1;
                        res.messages.push(format!("{check}: {m}"));
                    }
                    Err(_) => {
                        res.failed += 1;
                        res.messages.push(format!("{check}: panicked"));
                    }
                }
            }
            res
        })
        .collect()
}
