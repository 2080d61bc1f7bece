//! Test-risk estimation, polynomial-projection residuals and the Gram
//! concentration diagnostic.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};
use crate::geometry::{sample_sphere, sample_test_set, SphereModelParams, TargetSpec};
use crate::harmonics::{dim_spherical_harmonics_f64, gegenbauer_eval};
use crate::rng::{self, stream};

/// One experiment point. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub method: String,
    pub d: usize,
    pub eta: f64,
    pub kappa: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub n_neurons: Option<usize>,
    pub lambda: f64,
    pub risk: f64,
    pub risk_normalized: f64,
    /// Standard error of `risk_normalized`.
    pub mc_stderr: f64,
    pub plateau_l0: f64,
    pub plateau_l1: f64,
    pub plateau_l2: f64,
    pub plateau_l3: f64,
    pub plateau_l4: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Set when this grid point failed; numeric fields are then NaN.
    pub error: Option<String>,
}

impl RiskReport {
    /// A report with plateau references filled in and risk fields unset.
    pub fn new(method: impl Into<String>, params: &SphereModelParams, n: usize, n_neurons: Option<usize>, target: &TargetSpec) -> Self {
        let norm = target.norm_sq();
        let plateau = |l: usize| if norm > 0.0 { target.energy_above(l) / norm } else { 0.0 };
        Self {
            method: method.into(),
            d: params.d,
            eta: params.eta,
            kappa: params.kappa,
            n,
            n_neurons,
            lambda: f64::NAN,
            risk: f64::NAN,
            risk_normalized: f64::NAN,
            mc_stderr: f64::NAN,
            plateau_l0: plateau(0),
            plateau_l1: plateau(1),
            plateau_l2: plateau(2),
            plateau_l3: plateau(3),
            plateau_l4: plateau(4),
            seed: params.seed,
            wall_time_s: 0.0,
            error: None,
        }
    }

    pub fn plateau(&self, ell: usize) -> Option<f64> {
        [self.plateau_l0, self.plateau_l1, self.plateau_l2, self.plateau_l3, self.plateau_l4].get(ell).copied()
    }

    pub fn with_risk(mut self, estimate: RiskEstimate, lambda: f64) -> Self {
        self.risk = estimate.risk;
        self.risk_normalized = estimate.normalized;
        self.mc_stderr = estimate.stderr;
        self.lambda = lambda;
        self
    }

    pub fn with_error(mut self, message: impl Into<String>) -> Self {
        self.error = Some(message.into());
        self
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Writes reports with a header row.
pub fn write_reports<W: Write>(writer: W, reports: &[RiskReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    if reports.is_empty() {
        w.write_record(REPORT_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_file(path: &Path, reports: &[RiskReport]) -> Result<()> {
    write_reports(std::fs::File::create(path)?, reports)
}

pub fn read_reports_file(path: &Path) -> Result<Vec<RiskReport>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub const REPORT_COLUMNS: [&str; 18] = [
    "method", "d", "eta", "kappa", "n", "N", "lambda", "risk", "risk_normalized", "mc_stderr", "plateau_l0",
    "plateau_l1", "plateau_l2", "plateau_l3", "plateau_l4", "seed", "wall_time_s", "error",
];

/// Monte-Carlo risk estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub risk: f64,
    pub normalized: f64,
    /// Standard error of `normalized`.
    pub stderr: f64,
}

/// Mean squared error of `predictions` against noiseless `truth`,
/// normalized by the exact `‖f‖²`.
pub fn risk_from_predictions(predictions: &[f64], truth: &[f64], norm_sq: f64) -> Result<RiskEstimate> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(shape(format!("{} predictions for {} test points", predictions.len(), truth.len())));
    }
    if !(norm_sq > 0.0) {
        return Err(domain("target has zero norm; normalized risk undefined"));
    }
    let m = truth.len() as f64;
    let sq: Vec<f64> = predictions.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).collect();
    let risk = sq.iter().sum::<f64>() / m;
    let var = if sq.len() > 1 { sq.iter().map(|s| (s - risk).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    Ok(RiskEstimate { risk, normalized: risk / norm_sq, stderr: (var / m).sqrt() / norm_sq })
}

/// `E_x[(f(x) − f̂(x))²]` on a fresh noiseless test set of size `n_test`
/// drawn from `params` (test stream of `params.seed`).
pub fn risk_estimate<P>(
    predictor: P,
    method: &str,
    target: &TargetSpec,
    params: &SphereModelParams,
    n_test: usize,
) -> Result<RiskReport>
where
    P: Fn(&DMatrix<f64>) -> Result<Vec<f64>>,
{
    if n_test < 1000 {
        log::warn!("risk estimate with only {n_test} test points");
    }
    let start = std::time::Instant::now();
    let test = sample_test_set(params, target, n_test)?;
    let pred = predictor(&test.x)?;
    let est = risk_from_predictions(&pred, &test.y, target.norm_sq())?;
    let mut report = RiskReport::new(method, params, 0, None, target).with_risk(est, f64::NAN);
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `‖P_{>ℓ} f‖²`, exact.
pub fn projection_residual(target: &TargetSpec, ell: usize) -> f64 {
    target.energy_above(ell)
}

/// Independent estimate of `‖P_{>ℓ} f‖²` through the reproducing kernel of
/// degree-`≤ℓ` harmonics on the latent sphere,
/// `‖P_{≤ℓ}f‖² = E_{z,z'}[f(z) f(z') Σ_{k≤ℓ} B(d0,k) Q_k(<z,z'>)]`, as a
/// pairwise U-statistic. Returns `(estimate, standard error)` from
/// `batches` independent batches of `batch_size` points.
pub fn projection_residual_mc(target: &TargetSpec, ell: usize, batches: usize, batch_size: usize, seed: u64) -> Result<(f64, f64)> {
    if batches < 2 || batch_size < 2 {
        return Err(domain("need at least two batches of two points"));
    }
    let d0 = target.d0;
    if d0 < 2 {
        return Err(domain("latent dimension must be >= 2"));
    }
    let dims: Vec<f64> = (0..=ell).map(|k| dim_spherical_harmonics_f64(d0, k)).collect();
    let estimates: Vec<f64> = (0..batches)
        .map(|b| {
            let mut g = stream(seed, rng::domain::ORACLE, b as u64);
            let z = sample_sphere(d0, (d0 as f64).sqrt(), batch_size, &mut g).expect("valid sphere");
            let f: Vec<f64> = (0..batch_size)
                .map(|i| target.eval_point(&z.row(i).iter().copied().collect::<Vec<_>>()))
                .collect();
            let gram = &z * z.transpose();
            let mut u = 0.0;
            for i in 0..batch_size {
                for j in 0..i {
                    let t = gram[(i, j)];
                    let kern: f64 = dims.iter().enumerate().map(|(k, b)| b * gegenbauer_eval(d0, k, t)).sum();
                    u += f[i] * f[j] * kern;
                }
            }
            let pairs = (batch_size * (batch_size - 1) / 2) as f64;
            let total = f.iter().map(|v| v * v).sum::<f64>() / batch_size as f64;
            total - u / pairs
        })
        .collect();
    let m = batches as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

/// `‖W − I‖_op` for `W_ij = Q_k(<θ_i, θ_j>)` with `N` points uniform on
/// `S^{d-1}(sqrt d)`. Small when `N ≪ d^k`.
pub fn gram_concentration_check(k: usize, d: usize, n_points: usize, seed: u64) -> Result<f64> {
    if d < 2 {
        return Err(domain(format!("need d >= 2, got {d}")));
    }
    if n_points <= 1 {
        return Ok(0.0);
    }
    let mut g = stream(seed, rng::domain::ORACLE, 0x6772_616d);
    let theta = sample_sphere(d, (d as f64).sqrt(), n_points, &mut g)?;
    let ip = &theta * theta.transpose();
    let w = DMatrix::from_fn(n_points, n_points, |i, j| if i == j { 0.0 } else { gegenbauer_eval(d, k, ip[(i, j)]) });
    let eig = w.symmetric_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{evaluate_target, make_synthetic_target, TargetComponent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SphereModelParams, TargetSpec) {
        let params = SphereModelParams::new(64, 0.5, 0.3, 0.0, 11).unwrap();
        let target = make_synthetic_target(params.d0(), &[2, 3, 4], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (params, target)
    }

    fn latent(x: &DMatrix<f64>, params: &SphereModelParams) -> DMatrix<f64> {
        x.columns(0, params.d0()).into_owned() / params.r()
    }

    fn only_degrees(target: &TargetSpec, keep: &[usize]) -> TargetSpec {
        let components: Vec<TargetComponent> =
            target.components.iter().filter(|c| keep.contains(&c.degree)).cloned().collect();
        let per_degree_energy = target.per_degree_energy.iter().filter(|(k, _)| keep.contains(k)).map(|(k, v)| (*k, *v)).collect();
        TargetSpec { d0: target.d0, components, per_degree_energy }
    }

    #[test]
    fn zero_and_exact_predictors() {
        let (params, target) = setup();
        let zero = risk_estimate(|x| Ok(vec![0.0; x.nrows()]), "zero", &target, &params, 10_000).unwrap();
        assert!((zero.risk_normalized - 1.0).abs() < 3.0 * zero.mc_stderr, "{zero:?}");
        let exact = risk_estimate(|x| evaluate_target(&target, &latent(x, &params)), "exact", &target, &params, 2000).unwrap();
        assert!(exact.risk_normalized.abs() < 1e-20);
        assert!(exact.risk_normalized >= -3.0 * exact.mc_stderr);
    }

    #[test]
    fn low_degree_projections_hit_plateaus() {
        let (params, target) = setup();
        // P_{≤1} f = 0: every component has degree >= 2
        let p1 = risk_estimate(|x| Ok(vec![0.0; x.nrows()]), "p1", &target, &params, 10_000).unwrap();
        assert!((p1.risk_normalized - p1.plateau_l1).abs() < 3.0 * p1.mc_stderr);
        assert_eq!(p1.plateau_l1, 1.0);
        let low = only_degrees(&target, &[2]);
        let p2 = risk_estimate(|x| evaluate_target(&low, &latent(x, &params)), "p2", &target, &params, 10_000).unwrap();
        assert!((p2.plateau_l2 - 2.0 / 3.0).abs() < 1e-15);
        assert!((p2.risk_normalized - 2.0 / 3.0).abs() < 3.0 * p2.mc_stderr, "{p2:?}");
    }

    #[test]
    fn exact_residuals() {
        let (_, target) = setup();
        assert_eq!(projection_residual(&target, 2), 2.0);
        assert_eq!(projection_residual(&target, 4), 0.0);
        assert_eq!(projection_residual(&target, 9), 0.0);
        assert_eq!(projection_residual(&target, 0), 3.0);
    }

    #[test]
    fn mc_projector_agrees() {
        let target = make_synthetic_target(8, &[2, 3, 4], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for ell in [1usize, 2, 3] {
            let (est, se) = projection_residual_mc(&target, ell, 40, 200, 5).unwrap();
            let exact = projection_residual(&target, ell);
            assert!((est - exact).abs() < 3.0 * se, "ℓ = {ell}: {est} ± {se} vs {exact}");
        }
    }

    #[test]
    fn gram_concentration() {
        assert_eq!(gram_concentration_check(2, 10, 1, 0).unwrap(), 0.0);
        assert!(gram_concentration_check(1, 400, 20, 1).unwrap() < 0.5);
        let wins = (0..10u64)
            .filter(|&s| gram_concentration_check(2, 200, 10, s).unwrap() < gram_concentration_check(2, 200, 200, s + 100).unwrap())
            .count();
        assert!(wins >= 9);
    }

    #[test]
    fn csv_round_trip_keeps_column_order() {
        let (params, target) = setup();
        let mut a = RiskReport::new("krr_rf_relu", &params, 100, None, &target);
        a.lambda = 0.1;
        a.risk = 0.5;
        let b = RiskReport::new("rf_relu", &params, 100, Some(64), &target).with_error("solver failed");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_reports_file(&path, &[a.clone(), b.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, REPORT_COLUMNS.join(","));
        let back = read_reports_file(&path).unwrap();
        assert_eq!(back[0].n_neurons, None);
        assert_eq!(back[1].n_neurons, Some(64));
        assert_eq!(back[1].error.as_deref(), Some("solver failed"));
        assert_eq!(back[0].risk, 0.5);
    }
}
