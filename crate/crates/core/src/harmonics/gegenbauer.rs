//! Gegenbauer polynomials `Q_k^{(d)}` on `[-d, d]`, normalized so that
//! `Q_k^{(d)}(d) = 1`.
//!
//! Convention: the argument is an inner product `<x, y>` of two points of
//! `S^{d-1}(sqrt d)`, so it ranges over `[-d, d]`. With this normalization
//! `E[Q_j Q_k] = δ_jk / B(d, k)` under the sphere marginal, and
//! `B(d,k) Q_k(<x, ·>)` is the reproducing kernel of degree-`k` harmonics.

use crate::error::{domain, Error, Result};

use super::hermite::hermite_monomial_coefficients;
use super::quadrature::{composite_rule, sphere_marginal_rule};
use super::{dim_spherical_harmonics_f64, MONOMIAL_TABLE_MAX_DEGREE};

#[inline]
fn s_coef(d: f64, k: f64) -> f64 {
    k / (2.0 * k + d - 2.0)
}

#[inline]
fn t_coef(d: f64, k: f64) -> f64 {
    (k + d - 2.0) / (2.0 * k + d - 2.0)
}

/// `Q_k^{(d)}(t)` by upward three-term recurrence. `t` is clamped to `[-d, d]`.
///
/// # Panics
/// If `d < 2`.
pub fn gegenbauer_eval(d: usize, k: usize, t: f64) -> f64 {
    assert!(d >= 2, "Gegenbauer polynomials need d >= 2");
    let df = d as f64;
    let t = t.clamp(-df, df);
    let u = t / df;
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, u);
    for j in 1..k {
        let jf = j as f64;
        let next = (u * cur - s_coef(df, jf) * prev) / t_coef(df, jf);
        prev = cur;
        cur = next;
    }
    cur
}

/// `[Q_0(t), ..., Q_max_k(t)]`.
pub fn gegenbauer_eval_all(d: usize, max_k: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_k + 1);
    fill_all(d as f64, max_k, t.clamp(-(d as f64), d as f64), &mut out);
    out
}

fn fill_all(df: f64, max_k: usize, t: f64, out: &mut Vec<f64>) {
    out.clear();
    let u = t / df;
    out.push(1.0);
    if max_k == 0 {
        return;
    }
    out.push(u);
    for j in 1..max_k {
        let jf = j as f64;
        let next = (u * out[j] - s_coef(df, jf) * out[j - 1]) / t_coef(df, jf);
        out.push(next);
    }
}

/// Gegenbauer polynomials of one dimension up to a maximum degree, with
/// monomial coefficient tables for the low degrees.
#[derive(Clone, Debug)]
pub struct GegenbauerBasis {
    d: usize,
    max_k: usize,
    /// `coeff_table[k][j]` is the coefficient of `t^j` in `Q_k`; present
    /// only for `k <= 12` (higher-degree monomial forms are ill-conditioned).
    coeff_table: Vec<Vec<f64>>,
}

impl GegenbauerBasis {
    pub fn new(d: usize, max_k: usize) -> Result<Self> {
        if d < 2 {
            return Err(domain(format!("Gegenbauer basis needs d >= 2, got {d}")));
        }
        let df = d as f64;
        let top = max_k.min(MONOMIAL_TABLE_MAX_DEGREE);
        let mut table: Vec<Vec<f64>> = vec![vec![1.0]];
        if top >= 1 {
            table.push(vec![0.0, 1.0 / df]);
        }
        for j in 1..top {
            let jf = j as f64;
            let (s, tc) = (s_coef(df, jf), t_coef(df, jf));
            let mut next = vec![0.0; j + 2];
            for (i, c) in table[j].iter().enumerate() {
                next[i + 1] += c / df;
            }
            for (i, c) in table[j - 1].iter().enumerate() {
                next[i] -= s * c;
            }
            next.iter_mut().for_each(|c| *c /= tc);
            table.push(next);
        }
        Ok(Self { d, max_k, coeff_table: table })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn max_k(&self) -> usize {
        self.max_k
    }

    pub fn eval(&self, k: usize, t: f64) -> f64 {
        gegenbauer_eval(self.d, k, t)
    }

    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        gegenbauer_eval_all(self.d, self.max_k, t)
    }

    /// Monomial coefficients of `Q_k` in `t` (lowest degree first), if tabulated.
    pub fn monomial_coefficients(&self, k: usize) -> Option<&[f64]> {
        self.coeff_table.get(k).map(Vec::as_slice)
    }
}

/// Number of quadrature nodes used for projections onto degrees `0..=max_k`.
pub fn projection_nodes(max_k: usize) -> usize {
    64.max(2 * max_k + 8)
}

/// Gegenbauer coefficients `λ_k = E[f(t) Q_k(t)]` under the sphere marginal,
/// so that `f = Σ_k λ_k B(d,k) Q_k`.
pub fn try_gegenbauer_project(
    d: usize,
    mut f: impl FnMut(f64) -> Result<f64>,
    max_k: usize,
) -> Result<Vec<f64>> {
    let rule = sphere_marginal_rule(d, projection_nodes(max_k))?;
    let df = d as f64;
    let mut lambdas = vec![0.0; max_k + 1];
    let mut q = Vec::with_capacity(max_k + 1);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(t)?;
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("integrand is {v} at t = {t}")));
        }
        fill_all(df, max_k, t, &mut q);
        for (l, qk) in lambdas.iter_mut().zip(&q) {
            *l += w * v * qk;
        }
    }
    Ok(lambdas)
}

/// Gegenbauer coefficients of an integrand with jumps or kinks at
/// `breakpoints` (given in `t`). Integrates the sphere-marginal density with
/// composite Gauss–Legendre panels split at the breakpoints instead of a
/// Gauss–Jacobi rule, which converges slowly on discontinuous integrands.
pub fn gegenbauer_project_piecewise(
    d: usize,
    mut f: impl FnMut(f64) -> f64,
    breakpoints: &[f64],
    max_k: usize,
) -> Result<Vec<f64>> {
    if d < 3 {
        return Err(domain(format!("sphere marginal needs d >= 3, got {d}")));
    }
    let df = d as f64;
    let cuts: Vec<f64> = breakpoints.iter().map(|b| b / df).collect();
    let width = 0.05f64.min(0.5 / df.sqrt()).min(1.0 / (max_k as f64 + 1.0));
    let (u, w) = composite_rule(1.0, &cuts, width);
    let expo = 0.5 * (df - 3.0);
    let mut lambdas = vec![0.0; max_k + 1];
    let mut total = 0.0;
    let mut q = Vec::with_capacity(max_k + 1);
    for (&u, &w) in u.iter().zip(&w) {
        let dens = w * if expo == 0.0 { 1.0 } else { (expo * (1.0 - u * u).ln()).exp() };
        if dens == 0.0 {
            continue;
        }
        total += dens;
        let t = df * u;
        let v = f(t);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("integrand is {v} at t = {t}")));
        }
        fill_all(df, max_k, t, &mut q);
        for (l, qk) in lambdas.iter_mut().zip(&q) {
            *l += dens * v * qk;
        }
    }
    lambdas.iter_mut().for_each(|l| *l /= total);
    Ok(lambdas)
}

/// Infallible-integrand form of [`try_gegenbauer_project`].
pub fn gegenbauer_project(d: usize, mut f: impl FnMut(f64) -> f64, max_k: usize) -> Result<Vec<f64>> {
    try_gegenbauer_project(d, |t| Ok(f(t)), max_k)
}

/// `Σ_k λ_k B(d,k) Q_k(t)`.
pub fn gegenbauer_synthesize(d: usize, lambdas: &[f64], t: f64) -> f64 {
    if lambdas.is_empty() {
        return 0.0;
    }
    let q = gegenbauer_eval_all(d, lambdas.len() - 1, t);
    lambdas
        .iter()
        .zip(&q)
        .enumerate()
        .map(|(k, (l, qk))| l * dim_spherical_harmonics_f64(d, k) * qk)
        .sum()
}

/// Monomial coefficients (in `x`) of `sqrt(B(d,k)) Q_k(sqrt(d) x)` and of
/// `He_k(x) / sqrt(k!)`. The first converges entrywise to the second as `d` grows.
pub fn gegenbauer_hermite_limit(d: usize, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if d < 3 {
        return Err(domain(format!("Hermite limit needs d >= 3, got {d}")));
    }
    if k > MONOMIAL_TABLE_MAX_DEGREE {
        return Err(domain(format!(
            "monomial coefficients are only tabulated up to degree {MONOMIAL_TABLE_MAX_DEGREE}"
        )));
    }
    let basis = GegenbauerBasis::new(d, k)?;
    let scale = dim_spherical_harmonics_f64(d, k).sqrt();
    let sqrt_d = (d as f64).sqrt();
    let rescaled = basis
        .monomial_coefficients(k)
        .expect("tabulated")
        .iter()
        .enumerate()
        .map(|(j, c)| c * sqrt_d.powi(j as i32) * scale)
        .collect();
    let fact_sqrt = (1..=k).map(|i| i as f64).product::<f64>().sqrt();
    let hermite = hermite_monomial_coefficients(k)
        .into_iter()
        .map(|c| c / fact_sqrt)
        .collect();
    Ok((rescaled, hermite))
}
