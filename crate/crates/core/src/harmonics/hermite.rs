//! Probabilists' Hermite polynomials and Hermite coefficients of activations.

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};

use super::quadrature::{composite_rule, gaussian_density};

/// `He_k(x)` via `He_{k+1} = x He_k - k He_{k-1}`.
pub fn hermite_eval(k: usize, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Monomial coefficients of `He_k`, lowest degree first.
pub fn hermite_monomial_coefficients(k: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if k == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for j in 1..k {
        let mut next = vec![0.0; j + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= j as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// Integrates `σ · ψ_k · φ` for `k = 0..=max_k` on a fixed composite grid,
/// where `ψ_k = He_k / sqrt(k!)`. The recurrence runs on Hermite functions
/// `ψ_k φ^{1/2}`, which stay bounded for all `k`.
fn integrate_on_grid(f: &dyn Fn(f64) -> f64, nodes: &[f64], weights: &[f64], max_k: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_k + 1];
    for (&x, &w) in nodes.iter().zip(weights) {
        let half = gaussian_density(x).sqrt();
        let fx = f(x);
        if fx == 0.0 || half == 0.0 {
            continue;
        }
        let a = w * fx * half;
        let (mut prev, mut cur) = (0.0, half);
        out[0] += a * cur;
        for (k, o) in out.iter_mut().enumerate().skip(1) {
            let km1 = (k - 1) as f64;
            let next = (x * cur - km1.sqrt() * prev) / (k as f64).sqrt();
            prev = cur;
            cur = next;
            *o += a * cur;
        }
    }
    out
}

/// Normalized Hermite coefficients `c_k = E[f(G) He_k(G)] / sqrt(k!)` for
/// `k = 0..=max_k`, so that `Σ c_k² = E[f(G)²]`.
///
/// `kinks` lists points where `f` or its derivatives jump; `growth` is the
/// exponent `c1 < 1` of a bound `f(x)² ≤ c0 exp(c1 x² / 2)`. The grid is
/// refined by halving the panel width until two successive results agree.
pub fn normalized_hermite_coefficients(
    f: &dyn Fn(f64) -> f64,
    kinks: &[f64],
    growth: f64,
    max_k: usize,
) -> Result<Vec<f64>> {
    if !(growth < 1.0) {
        return Err(Error::Domain(format!("growth exponent must be < 1, got {growth}")));
    }
    let half_width = 14f64.max((184.0 / (1.0 - growth)).sqrt());
    let mut panel = 0.5f64.min(1.5 / ((max_k + 1) as f64).sqrt());
    let (x, w) = composite_rule(half_width, kinks, panel);
    let mut current = integrate_on_grid(f, &x, &w, max_k);
    for _ in 0..4 {
        panel *= 0.5;
        let (x, w) = composite_rule(half_width, kinks, panel);
        let refined = integrate_on_grid(f, &x, &w, max_k);
        let scale = refined.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let converged = current
            .iter()
            .zip(&refined)
            .all(|(a, b)| (a - b).abs() <= 1e-8 * b.abs() + 1e-13 * scale);
        current = refined;
        if converged {
            return Ok(current);
        }
    }
    Err(Error::Accuracy(format!(
        "Hermite coefficients up to degree {max_k} did not converge under grid refinement"
    )))
}

/// `μ_k(σ) = E[σ(G) He_k(G)]`, read from the activation's cache.
///
/// Grows like `sqrt(k!)` times the normalized coefficient, so it overflows
/// to infinity past `k ≈ 170`; prefer [`ActivationSpec::hermite_coefficients`].
pub fn hermite_coefficient(activation: &ActivationSpec, k: usize) -> Result<f64> {
    let c = activation.hermite_coefficients(k)?[k];
    let log_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    Ok(c * (0.5 * log_fact).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use std::f64::consts::PI;

    #[test]
    fn hermite_examples() {
        assert_eq!(hermite_eval(0, 3.3), 1.0);
        assert_eq!(hermite_eval(1, -0.7), -0.7);
        assert_eq!(hermite_eval(2, 2.0), 3.0);
        assert_eq!(hermite_eval(3, 2.0), 2.0);
        assert_eq!(hermite_monomial_coefficients(4), vec![3.0, 0.0, -6.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_coefficients() {
        let act = ActivationSpec::new(Activation::Identity);
        assert!((hermite_coefficient(&act, 1).unwrap() - 1.0).abs() < 1e-12);
        for k in [0, 2, 3, 7] {
            assert!(hermite_coefficient(&act, k).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn relu_coefficients() {
        let act = ActivationSpec::new(Activation::Relu);
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        assert!((hermite_coefficient(&act, 0).unwrap() - phi0).abs() < 1e-12);
        assert!((hermite_coefficient(&act, 1).unwrap() - 0.5).abs() < 1e-12);
        // μ_k = φ(0) He_{k-2}(0) for k >= 2
        for k in 2..12 {
            let expect = phi0 * hermite_eval(k - 2, 0.0);
            assert!((hermite_coefficient(&act, k).unwrap() - expect).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn parseval_for_tanh() {
        let act = ActivationSpec::new(Activation::Tanh);
        let c = act.hermite_coefficients(64).unwrap();
        let energy: f64 = c.iter().map(|c| c * c).sum();
        assert!((energy - act.moments().unwrap().second).abs() < 1e-10);
    }

    #[test]
    fn rejects_fast_growth() {
        assert!(normalized_hermite_coefficients(&|x| x, &[], 1.0, 4).is_err());
    }
}
