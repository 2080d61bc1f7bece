//! Quadrature rules for the two probability measures the library integrates
//! against: the one-coordinate marginal of the uniform sphere and the
//! standard Gaussian.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{domain, Result};

/// Which probability measure a [`QuadratureRule`] integrates against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Measure {
    /// Law of `sqrt(d) <x, e1>` for `x ~ Unif(S^{d-1}(sqrt d))`, supported on `[-d, d]`.
    SphereMarginal { d: usize },
    /// Standard normal.
    Gaussian,
}

/// Gaussian quadrature rule for a probability measure.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    /// Nonnegative, summing to one.
    pub weights: Vec<f64>,
    pub measure: Measure,
    /// Polynomials up to this degree are integrated exactly.
    pub exact_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Golub–Welsch for a symmetric measure (zero diagonal) with recurrence
/// coefficients `beta[k]`, k = 1..m-1. Weights are recomputed from the
/// Christoffel function, which keeps small tail weights accurate in a
/// relative sense.
fn golub_welsch_symmetric(m: usize, beta: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    if m == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let off: Vec<f64> = (1..m).map(|k| beta(k).sqrt()).collect();
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for (k, &b) in off.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // symmetrize so that odd moments vanish to rounding
    for i in 0..m / 2 {
        let s = 0.5 * (nodes[m - 1 - i] - nodes[i]);
        nodes[i] = -s;
        nodes[m - 1 - i] = s;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            // orthonormal recurrence: b_{k+1} p_{k+1} = x p_k - b_k p_{k-1}
            let mut prev = 0.0;
            let mut cur = 1.0;
            let mut sum = 1.0;
            for k in 0..m - 1 {
                let b_prev = if k == 0 { 0.0 } else { off[k - 1] };
                let next = (x * cur - b_prev * prev) / off[k];
                prev = cur;
                cur = next;
                sum += cur * cur;
            }
            1.0 / sum
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Gauss rule with `nodes` points for the sphere marginal `τ̃_{d-1}` on `[-d, d]`.
///
/// In `u = t/d` the density is proportional to `(1 - u^2)^{(d-3)/2}`, a
/// symmetric Jacobi (Gegenbauer) weight.
pub fn sphere_marginal_rule(d: usize, nodes: usize) -> Result<QuadratureRule> {
    if d < 3 {
        return Err(domain(format!("sphere marginal quadrature needs d >= 3, got {d}")));
    }
    let m = nodes.max(1);
    let df = d as f64;
    let (u, weights) = golub_welsch_symmetric(m, |k| {
        let k = k as f64;
        k * (k + df - 3.0) / ((2.0 * k + df - 2.0) * (2.0 * k + df - 4.0))
    });
    Ok(QuadratureRule {
        nodes: u.into_iter().map(|u| df * u).collect(),
        weights,
        measure: Measure::SphereMarginal { d },
        exact_degree: 2 * m - 1,
    })
}

/// Gauss–Jacobi rule for the sphere marginal exact for polynomials up to `degree`.
pub fn sphere_marginal_quadrature(d: usize, degree: usize) -> Result<QuadratureRule> {
    sphere_marginal_rule(d, (degree + 2) / 2)
}

/// Gauss–Hermite rule (probabilists' convention) with `nodes` points.
pub fn gauss_hermite_rule(nodes: usize) -> QuadratureRule {
    let m = nodes.max(1);
    let (x, weights) = golub_welsch_symmetric(m, |k| k as f64);
    QuadratureRule {
        nodes: x,
        weights,
        measure: Measure::Gaussian,
        exact_degree: 2 * m - 1,
    }
}

const PANEL_POINTS: usize = 32;

fn gauss_legendre_32() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_POINTS))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=m {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = mf * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[m - 1 - i] = x;
        weights[m - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite 32-point Gauss–Legendre nodes on `[-half_width, half_width]`
/// with panel boundaries at every breakpoint. Returned weights are for `dx`.
pub fn composite_rule(half_width: f64, breakpoints: &[f64], panel_width: f64) -> (Vec<f64>, Vec<f64>) {
    let mut cuts: Vec<f64> = vec![-half_width, half_width];
    cuts.extend(breakpoints.iter().copied().filter(|b| b.abs() < half_width));
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let (gl_x, gl_w) = gauss_legendre_32();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let panels = ((b - a) / panel_width).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let mid = lo + 0.5 * h;
            for (x, w) in gl_x.iter().zip(gl_w) {
                nodes.push(mid + 0.5 * h * x);
                weights.push(0.5 * h * w);
            }
        }
    }
    (nodes, weights)
}

/// Standard normal density.
pub fn gaussian_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[f(G)]` for `G ~ N(0,1)`, with `f` smooth between `breakpoints`.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, breakpoints: &[f64]) -> f64 {
    let (x, w) = composite_rule(14.0, breakpoints, 0.25);
    x.iter()
        .zip(&w)
        .map(|(&x, &w)| w * f(x) * gaussian_density(x))
        .sum()
}
