use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind, Method};
use super::runners::run_grid;
use crate::error::{Error, Result};
use crate::solvers::RiskReport;

/// Gap statistics for one method (and, for width sweeps, one `n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseSummary {
    pub method: String,
    /// Sample size the width sweep was run at; `None` for KRR curves.
    pub n: Option<usize>,
    pub kappas: Vec<f64>,
    /// Max vertical gap with the rescaled x-axis.
    pub gap: f64,
    pub overlap: [f64; 2],
    /// Same statistic against the raw log axis.
    pub gap_raw: f64,
    pub overlap_raw: [f64; 2],
    pub points_per_curve: Vec<usize>,
}

/// Piecewise-linear interpolation through `(x, y)` knots sorted by `x`.
/// Exact at the knots; `None` outside `[x_0, x_last]`.
pub fn interpolate(knots: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = knots.first()?;
    let last = knots.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = knots.partition_point(|k| k.0 < x);
    if i < knots.len() && knots[i].0 == x {
        return Some(knots[i].1);
    }
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

const UNIFORM_POINTS: usize = 200;

/// Largest spread `max_c y_c(x) - min_c y_c(x)` over the common x-range of
/// all curves. Evaluated at every knot inside the overlap plus a uniform grid.
pub fn max_vertical_gap(curves: &[Vec<(f64, f64)>]) -> Result<(f64, [f64; 2])> {
    if curves.len() < 2 {
        return Err(Error::Config(format!("need at least two curves, got {}", curves.len())));
    }
    if let Some(c) = curves.iter().find(|c| c.len() < 2) {
        return Err(Error::Config(format!("curve with {} points cannot be interpolated", c.len())));
    }
    let lo = curves.iter().map(|c| c[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().map(|c| c[c.len() - 1].0).fold(f64::INFINITY, f64::min);
    if !(lo <= hi) {
        return Err(Error::Config(format!("curves do not overlap (common range [{lo}, {hi}])")));
    }
    let mut xs: Vec<f64> = curves.iter().flatten().map(|k| k.0).filter(|x| *x >= lo && *x <= hi).collect();
    xs.extend((0..=UNIFORM_POINTS).map(|i| lo + (hi - lo) * i as f64 / UNIFORM_POINTS as f64));
    let mut gap: f64 = 0.0;
    for x in xs {
        let ys: Vec<f64> = curves.iter().filter_map(|c| interpolate(c, x)).collect();
        let max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ys.iter().copied().fold(f64::INFINITY, f64::min);
        gap = gap.max(max - min);
    }
    Ok((gap, [lo, hi]))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Collapse coordinate for a report: `log n / log d_eff` for KRR,
/// `log p_eff / log d_eff` for RF and NT. Returns `(rescaled, raw)`.
fn axes(method: Method, r: &RiskReport, d_eff: f64, d: usize) -> (f64, f64) {
    let ld = d_eff.ln();
    match method {
        Method::KrrRf | Method::KrrNt | Method::Nn => ((r.n as f64).ln() / ld, (r.n as f64).ln()),
        Method::Rf => {
            let nn = r.n_neurons.unwrap_or(0) as f64;
            (nn.ln() / ld, nn.ln())
        }
        Method::Nt => {
            let nn = r.n_neurons.unwrap_or(0) as f64;
            ((nn * d_eff).ln() / ld, (nn * d as f64).ln())
        }
    }
}

/// Median-over-seeds curves for one method, one per `κ`, sorted by x.
fn curves_for(
    config: &ExperimentConfig,
    reports: &[RiskReport],
    method: Method,
    n: Option<usize>,
) -> Result<(Vec<Vec<(f64, f64)>>, Vec<Vec<(f64, f64)>>)> {
    let mut rescaled = Vec::new();
    let mut raw = Vec::new();
    for &kappa in &config.model.kappa {
        let d_eff = config.params(kappa, 0)?.d_eff();
        let mut cells: Vec<((f64, f64), Vec<f64>)> = Vec::new();
        for r in reports.iter().filter(|r| {
            r.is_ok()
                && r.kappa == kappa
                && r.method.starts_with(&format!("{}_", method.name()))
                && !r.method.ends_with("_train")
                && n.map_or(true, |n| r.n == n)
                && r.risk_normalized.is_finite()
        }) {
            let key = axes(method, r, d_eff, config.model.d);
            match cells.iter_mut().find(|c| c.0 == key) {
                Some(c) => c.1.push(r.risk_normalized),
                None => cells.push((key, vec![r.risk_normalized])),
            }
        }
        cells.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0));
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (key, mut ys) in cells {
            let m = median(&mut ys);
            a.push((key.0, m));
            b.push((key.1, m));
        }
        if a.len() < 2 {
            return Err(Error::Evaluation(format!(
                "{} at kappa = {kappa}: only {} grid points succeeded",
                method.name(),
                a.len()
            )));
        }
        rescaled.push(a);
        raw.push(b);
    }
    Ok((rescaled, raw))
}

/// Gap statistics from already computed rows.
pub fn collapse_summaries(config: &ExperimentConfig, reports: &[RiskReport]) -> Result<Vec<CollapseSummary>> {
    let mut out = Vec::new();
    for &method in &config.methods {
        let ns: Vec<Option<usize>> =
            if method.uses_width() { config.n_values()?.into_iter().map(Some).collect() } else { vec![None] };
        for n in ns {
            let (rescaled, raw) = curves_for(config, reports, method, n)?;
            let (gap, overlap) = max_vertical_gap(&rescaled)?;
            let (gap_raw, overlap_raw) = max_vertical_gap(&raw)?;
            out.push(CollapseSummary {
                method: method.name().to_string(),
                n,
                kappas: config.model.kappa.clone(),
                gap,
                overlap,
                gap_raw,
                overlap_raw,
                points_per_curve: rescaled.iter().map(Vec::len).collect(),
            });
        }
    }
    Ok(out)
}

/// Runs the sweep and measures how well the `κ` curves collapse.
pub fn run_collapse_check(config: &ExperimentConfig) -> Result<(Vec<RiskReport>, Vec<CollapseSummary>)> {
    if config.kind != ExperimentKind::CollapseCheck {
        return Err(Error::Config(format!("expected a collapse_check config, got {}", config.kind.name())));
    }
    let reports = run_grid(config)?;
    let summaries = collapse_summaries(config, &reports)?;
    Ok((reports, summaries))
}
