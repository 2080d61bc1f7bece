use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind, Method};
use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::features::{sample_weights, FeatureKind, FeatureMap, FeatureOptions, DEFAULT_MEMORY_BUDGET};
use crate::geometry::{make_synthetic_target, sample_dataset, sample_test_set, Dataset, SphereModelParams, TargetSpec};
use crate::kernels::{kernel_matrix_packed, KernelKind, KernelSpec};
use crate::nn::{nn_init, nn_train, write_trace_file, TraceSet};
use crate::rng::{self, derive_seed, stream};
use crate::solvers::{
    feature_ridge_path, krr_fit_path, krr_predict_many, risk_from_predictions, write_reports_file, RidgeFit,
    RidgeOptions, RiskEstimate, RiskReport,
};

/// One cell of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub kappa: f64,
    pub method: Method,
    /// Parameter count (RF/NT) or neuron count (NN).
    pub width: Option<usize>,
    pub n: usize,
    pub seed: u64,
}

/// The synthetic target used with `seed`; shared by every `κ` and `n`.
pub fn target_for(config: &ExperimentConfig, d0: usize, seed: u64) -> Result<TargetSpec> {
    make_synthetic_target(d0, &config.target_windows, &mut stream(seed, rng::domain::TARGET, 0))
}

/// Grid points in output order: κ, method, width, n, seed.
pub fn grid_points(config: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let ns = config.n_values()?;
    let mut out = Vec::new();
    for &kappa in &config.model.kappa {
        for &method in &config.methods {
            let widths: Vec<Option<usize>> =
                if method.uses_width() { config.width_values()?.into_iter().map(Some).collect() } else { vec![None] };
            for &width in &widths {
                for &n in &ns {
                    for &seed in &config.seeds {
                        out.push(GridPoint { kappa, method, width, n, seed });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn method_tag(method: Method, activation: &ActivationSpec) -> String {
    format!("{}_{}", method.name(), activation.name())
}

fn ridge_options(config: &ExperimentConfig) -> RidgeOptions {
    let mut o = RidgeOptions::default();
    if let Some(t) = config.cg_tol {
        o.cg_tol = t;
    }
    if let Some(b) = config.memory_budget_bytes {
        o.memory_budget_bytes = b;
    }
    o
}

fn neurons(method: Method, width: usize, d: usize) -> usize {
    match method {
        Method::Nt => width / d,
        _ => width,
    }
}

/// Evaluates every λ and keeps the best test risk.
fn best_of(fits: &[Result<RidgeFit>], predictions: &[Vec<f64>], test: &Dataset) -> Result<(RiskEstimate, f64)> {
    let norm = test.target.norm_sq();
    let ok: Vec<&RidgeFit> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
    let mut best: Option<(RiskEstimate, f64)> = None;
    for (fit, pred) in ok.iter().zip(predictions) {
        let est = risk_from_predictions(pred, &test.y, norm)?;
        if best.map_or(true, |(b, _)| est.normalized < b.normalized) {
            best = Some((est, fit.lambda));
        }
    }
    best.ok_or_else(|| {
        fits.iter()
            .find_map(|f| f.as_ref().err())
            .map(|e| Error::Solver { reason: format!("no ridge parameter succeeded: {e}"), iterations: 0, residual: f64::NAN })
            .unwrap_or_else(|| Error::Config("empty ridge grid".into()))
    })
}

struct PointContext {
    params: SphereModelParams,
    target: TargetSpec,
    train: Dataset,
    test: Dataset,
}

fn context(config: &ExperimentConfig, p: &GridPoint) -> Result<PointContext> {
    let params = config.params(p.kappa, p.seed)?;
    let target = target_for(config, params.d0(), p.seed)?;
    let train = sample_dataset(&params, &target, p.n)?;
    let test = sample_test_set(&params, &target, config.test_size)?;
    Ok(PointContext { params, target, train, test })
}

fn krr_point(config: &ExperimentConfig, p: &GridPoint, ctx: &PointContext) -> Result<Vec<RiskReport>> {
    let act: Arc<ActivationSpec> = Arc::new(ActivationSpec::new(config.activation));
    let kind = if p.method == Method::KrrNt { KernelKind::Nt } else { KernelKind::Rf };
    let spec = KernelSpec::new(kind, act.clone());
    let radius_sq = ctx.params.radius_sq();
    let lambdas = config.lambdas()?;
    let fits = {
        let h = kernel_matrix_packed(&spec, &ctx.train.x, radius_sq)?;
        krr_fit_path(&h, &ctx.train.y, &lambdas, &ridge_options(config))?
    };
    let ok: Vec<&RidgeFit> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
    let preds = krr_predict_many(&ok, &spec, &ctx.train.x, &ctx.test.x, radius_sq)?;
    let (est, lambda) = best_of(&fits, &preds, &ctx.test)?;
    let tag = method_tag(p.method, &act);
    let mut rows = vec![RiskReport::new(&tag, &ctx.params, p.n, None, &ctx.target).with_risk(est, lambda)];
    if config.include_train_risk {
        if let Some(fit) = ok.iter().min_by(|a, b| a.lambda.total_cmp(&b.lambda)) {
            let pred = krr_predict_many(&[*fit], &spec, &ctx.train.x, &ctx.train.x, radius_sq)?.remove(0);
            let truth = ctx.train.target_values();
            let est = risk_from_predictions(&pred, &truth, ctx.target.norm_sq())?;
            rows.push(RiskReport::new(format!("{tag}_train"), &ctx.params, p.n, None, &ctx.target).with_risk(est, fit.lambda));
        }
    }
    Ok(rows)
}

fn feature_point(config: &ExperimentConfig, p: &GridPoint, ctx: &PointContext) -> Result<Vec<RiskReport>> {
    let act: Arc<ActivationSpec> = Arc::new(ActivationSpec::new(config.activation));
    let d = config.model.d;
    let width = p.width.expect("feature methods carry a width");
    let n_neurons = neurons(p.method, width, d);
    if n_neurons == 0 {
        return Err(Error::Config(format!("parameter count {width} gives zero NT neurons at d = {d}")));
    }
    let kind = if p.method == Method::Nt { FeatureKind::Nt } else { FeatureKind::Rf };
    let weights = sample_weights(n_neurons, d, derive_seed(p.seed, rng::domain::WEIGHTS))?;
    let map = FeatureMap::new(kind, weights, act.clone(), ctx.params.radius_sq())?;
    let budget = config.memory_budget_bytes.unwrap_or(DEFAULT_MEMORY_BUDGET);
    let opts = FeatureOptions { memory_budget_bytes: budget, compact: p.n * map.n_features() * 8 > budget / 2 };
    let lambdas = config.lambdas()?;
    let fits = {
        let phi = map.features(&ctx.train.x, opts)?;
        feature_ridge_path(&phi, &ctx.train.y, &lambdas, &ridge_options(config))?
    };
    let ok: Vec<&RidgeFit> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
    let mut coef = DMatrix::zeros(map.n_features(), ok.len());
    for (c, f) in ok.iter().enumerate() {
        coef.column_mut(c).copy_from_slice(&f.coefficients);
    }
    let out = map.predict(&ctx.test.x, &coef)?;
    let preds: Vec<Vec<f64>> = (0..ok.len()).map(|c| out.column(c).iter().copied().collect()).collect();
    let (est, lambda) = best_of(&fits, &preds, &ctx.test)?;
    let tag = method_tag(p.method, &act);
    Ok(vec![RiskReport::new(tag, &ctx.params, p.n, Some(n_neurons), &ctx.target).with_risk(est, lambda)])
}

fn nn_point(config: &ExperimentConfig, p: &GridPoint, ctx: &PointContext) -> Result<Vec<RiskReport>> {
    let act: Arc<ActivationSpec> = Arc::new(ActivationSpec::new(config.activation));
    let width = p.width.expect("nn carries a width");
    let train_cfg = config.train.unwrap_or_default();
    let net = nn_init(width, config.model.d, act.clone(), ctx.params.radius_sq(), derive_seed(p.seed, rng::domain::NN_INIT))?;
    let ts = TraceSet { x: &ctx.test.x, y: &ctx.test.y, norm_sq: ctx.target.norm_sq() };
    let out = nn_train(&net, &ctx.train.x, &ctx.train.y, &train_cfg, Some(&ts))?;
    if train_cfg.trace_every > 0 {
        let dir = config.output.join("traces");
        std::fs::create_dir_all(&dir)?;
        let name = format!("nn_kappa{}_n{}_N{}_seed{}.csv", p.kappa, p.n, width, p.seed);
        write_trace_file(&dir.join(name), &out.trace)?;
    }
    let pred = out.net.forward(&ctx.test.x)?;
    let est = risk_from_predictions(&pred, &ctx.test.y, ctx.target.norm_sq())?;
    let tag = method_tag(p.method, &act);
    Ok(vec![RiskReport::new(tag, &ctx.params, p.n, Some(width), &ctx.target).with_risk(est, train_cfg.l2)])
}

/// Runs one grid point; failures become a single row carrying the error.
pub fn evaluate_point(config: &ExperimentConfig, p: &GridPoint) -> Vec<RiskReport> {
    let start = Instant::now();
    let act = ActivationSpec::new(config.activation);
    let result = context(config, p).and_then(|ctx| match p.method {
        Method::KrrRf | Method::KrrNt => krr_point(config, p, &ctx),
        Method::Rf | Method::Nt => feature_point(config, p, &ctx),
        Method::Nn => nn_point(config, p, &ctx),
    });
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok(mut rows) => {
            for r in &mut rows {
                r.wall_time_s = elapsed;
            }
            rows
        }
        Err(e) => {
            log::error!("grid point {p:?} failed: {e}");
            let params = SphereModelParams {
                d: config.model.d,
                eta: config.model.eta,
                kappa: p.kappa,
                noise_tau: config.model.noise_tau,
                seed: p.seed,
            };
            let target = target_for(config, params.d0(), p.seed).unwrap_or_else(|_| TargetSpec {
                d0: params.d0(),
                components: vec![],
                per_degree_energy: Default::default(),
            });
            let n_neurons = p.width.map(|w| neurons(p.method, w, config.model.d));
            let mut r = RiskReport::new(method_tag(p.method, &act), &params, p.n, n_neurons, &target).with_error(e.to_string());
            r.wall_time_s = elapsed;
            vec![r]
        }
    }
}

/// Evaluates all grid points (in parallel when the pool has several
/// threads) and returns rows in grid order.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<RiskReport>> {
    config.validate()?;
    let points = grid_points(config)?;
    let rows: Vec<Vec<RiskReport>> = points.par_iter().map(|p| evaluate_point(config, p)).collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn run_krr_staircase(config: &ExperimentConfig) -> Result<Vec<RiskReport>> {
    expect_kind(config, ExperimentKind::KrrStaircase)?;
    run_grid(config)
}

pub fn run_rfnt_approximation(config: &ExperimentConfig) -> Result<Vec<RiskReport>> {
    expect_kind(config, ExperimentKind::RfntApproximation)?;
    run_grid(config)
}

pub fn run_nn_vs_krr(config: &ExperimentConfig) -> Result<Vec<RiskReport>> {
    expect_kind(config, ExperimentKind::NnVsKrr)?;
    run_grid(config)
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.kind == kind {
        Ok(())
    } else {
        Err(Error::Config(format!("expected a {} config, got {}", kind.name(), config.kind.name())))
    }
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub csv: PathBuf,
    pub rows: usize,
    pub failed: usize,
    pub collapse: Vec<super::collapse::CollapseSummary>,
}

/// Validates, runs, and writes `<output>/<kind>.csv` (plus
/// `collapse_summary.json` for collapse checks).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let csv = config.output.join(format!("{}.csv", config.kind.name()));
    match config.kind {
        ExperimentKind::TheoryReport => {
            let rows = super::theory::run_theory_report(config)?;
            super::theory::write_theory_file(&csv, &rows)?;
            Ok(RunSummary { kind: config.kind, csv, rows: rows.len(), failed: 0, collapse: vec![] })
        }
        ExperimentKind::CollapseCheck => {
            let (reports, summaries) = super::collapse::run_collapse_check(config)?;
            write_reports_file(&csv, &reports)?;
            std::fs::write(config.output.join("collapse_summary.json"), serde_json::to_string_pretty(&summaries)?)?;
            let failed = reports.iter().filter(|r| !r.is_ok()).count();
            Ok(RunSummary { kind: config.kind, csv, rows: reports.len(), failed, collapse: summaries })
        }
        _ => {
            let reports = run_grid(config)?;
            write_reports_file(&csv, &reports)?;
            let failed = reports.iter().filter(|r| !r.is_ok()).count();
            Ok(RunSummary { kind: config.kind, csv, rows: reports.len(), failed, collapse: vec![] })
        }
    }
}
