//! Gegenbauer and Hermite polynomials, spherical-harmonic subspace
//! dimensions, and quadrature against the sphere marginal and the Gaussian.

mod gegenbauer;
mod hermite;
mod quadrature;

pub use gegenbauer::{
    gegenbauer_eval, gegenbauer_eval_all, gegenbauer_hermite_limit, gegenbauer_project,
    gegenbauer_project_piecewise,
    gegenbauer_synthesize, projection_nodes, try_gegenbauer_project, GegenbauerBasis,
};
pub use hermite::{
    hermite_coefficient, hermite_eval, hermite_monomial_coefficients, normalized_hermite_coefficients,
};
pub use quadrature::{
    composite_rule, gauss_hermite_rule, gauss_legendre, gaussian_density, gaussian_expectation,
    sphere_marginal_quadrature, sphere_marginal_rule, Measure, QuadratureRule,
};

use crate::error::{domain, Result};

/// Highest degree for which monomial coefficient tables are kept.
pub const MONOMIAL_TABLE_MAX_DEGREE: usize = 12;

/// Dimension `B(d, k)` of the degree-`k` spherical harmonics on `S^{d-1}`.
///
/// Exact integer arithmetic; errors on `d < 2` or overflow of `u128`.
pub fn dim_spherical_harmonics(d: usize, k: usize) -> Result<u128> {
    if d < 2 {
        return Err(domain(format!("spherical harmonics need d >= 2, got {d}")));
    }
    if k == 0 {
        return Ok(1);
    }
    if d == 2 {
        return Ok(2);
    }
    // C(k+d-3, k-1) built incrementally; each partial product is itself a binomial.
    let n = (k + d - 3) as u128;
    let r = (k - 1).min(d - 2) as u128;
    let mut binom: u128 = 1;
    for i in 0..r {
        binom = binom
            .checked_mul(n - i)
            .ok_or_else(|| domain(format!("B({d},{k}) overflows")))?
            / (i + 1);
    }
    let num = binom
        .checked_mul((2 * k + d - 2) as u128)
        .ok_or_else(|| domain(format!("B({d},{k}) overflows")))?;
    Ok(num / k as u128)
}

/// `B(d, k)` in floating point, valid for any size. Panics if `d < 2`.
pub fn dim_spherical_harmonics_f64(d: usize, k: usize) -> f64 {
    assert!(d >= 2, "spherical harmonics need d >= 2");
    if k == 0 {
        return 1.0;
    }
    if d == 2 {
        return 2.0;
    }
    // log C(k+d-3, k-1) by summing logs keeps large (d, k) finite
    let r = (k - 1).min(d - 2);
    let n = (k + d - 3) as f64;
    let log_binom: f64 = (0..r).map(|i| ((n - i as f64) / (i as f64 + 1.0)).ln()).sum();
    ((2 * k + d - 2) as f64 / k as f64) * log_binom.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimension_examples() {
        assert_eq!(dim_spherical_harmonics(9, 0).unwrap(), 1);
        assert_eq!(dim_spherical_harmonics(5, 1).unwrap(), 5);
        assert_eq!(dim_spherical_harmonics(4, 2).unwrap(), 9);
        assert_eq!(dim_spherical_harmonics(3, 5).unwrap(), 11);
        assert_eq!(dim_spherical_harmonics(2, 7).unwrap(), 2);
        assert!(dim_spherical_harmonics(1, 2).is_err());
        // d(d+1)/2 - 1 for k = 2
        assert_eq!(dim_spherical_harmonics(256, 2).unwrap(), 256 * 257 / 2 - 1);
    }

    #[test]
    fn float_matches_integer() {
        for d in 2..40 {
            for k in 0..15 {
                let exact = dim_spherical_harmonics(d, k).unwrap() as f64;
                let approx = dim_spherical_harmonics_f64(d, k);
                assert!((approx - exact).abs() <= 1e-10 * exact, "d={d} k={k}");
            }
        }
    }

    proptest! {
        #[test]
        fn dimension_non_decreasing_in_k(d in 2usize..300, k in 0usize..12) {
            prop_assert!(dim_spherical_harmonics(d, k + 1).unwrap() >= dim_spherical_harmonics(d, k).unwrap());
        }

        #[test]
        fn normalization_at_d(d in 2usize..2000, k in 0usize..40) {
            prop_assert!((gegenbauer_eval(d, k, d as f64) - 1.0).abs() < 1e-10);
        }

        #[test]
        fn project_synthesize_round_trip(
            d in 3usize..200,
            c in proptest::collection::vec(-2.0f64..2.0, 5),
        ) {
            let f = |t: f64| gegenbauer_synthesize(d, &c, t);
            let back = gegenbauer_project(d, f, 4).unwrap();
            for (a, b) in c.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gegenbauer_orthogonality() {
        for d in [5usize, 20, 100] {
            for k in 0..=6 {
                let rule = sphere_marginal_quadrature(d, 2 * k + 4).unwrap();
                for j in 0..=6 {
                    let v = rule.integrate(|t| gegenbauer_eval(d, j, t) * gegenbauer_eval(d, k, t));
                    let b = dim_spherical_harmonics_f64(d, k);
                    let expect = if j == k { 1.0 / b } else { 0.0 };
                    // the rule for degree 2k+4 only covers j <= k + 4
                    if j <= k + 4 {
                        assert!((v - expect).abs() < 1e-8 * (1.0 / b + 1e-12), "d={d} j={j} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn hermite_orthogonality() {
        let rule = gauss_hermite_rule(20);
        let mut fact = 1.0;
        for k in 0..=8 {
            if k > 0 {
                fact *= k as f64;
            }
            for j in 0..=8 {
                let v = rule.integrate(|x| hermite_eval(j, x) * hermite_eval(k, x));
                let expect = if j == k { fact } else { 0.0 };
                assert!((v - expect).abs() < 1e-8, "j={j} k={k}: {v}");
            }
        }
    }

    #[test]
    fn hermite_limit_converges() {
        for k in 0..=4 {
            let (a, b) = gegenbauer_hermite_limit(10_000, k).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 0.02 * y.abs() + 1e-12, "k={k}: {a:?} vs {b:?}");
            }
        }
    }

    /// Rodrigues: Q_k(du) ∝ (1-u²)^{-(d-3)/2} (d/du)^k (1-u²)^{k+(d-3)/2}.
    /// For k <= 3 the derivatives are expanded by hand into polynomials in u.
    #[test]
    fn rodrigues_low_degrees() {
        for d in [3usize, 6, 11, 50] {
            let b = (d as f64 - 3.0) / 2.0;
            let rodrigues = |k: usize, u: f64| -> f64 {
                let a = k as f64 + b;
                let w = 1.0 - u * u;
                match k {
                    0 => 1.0,
                    // D (1-u²)^a = -2a u (1-u²)^{a-1}
                    1 => -2.0 * a * u,
                    // D² (1-u²)^a = (1-u²)^{a-2} [4a(a-1)u² - 2a(1-u²)]
                    2 => 4.0 * a * (a - 1.0) * u * u - 2.0 * a * w,
                    // D³ (1-u²)^a = (1-u²)^{a-3} [-8a(a-1)(a-2)u³ + 12a(a-1)u(1-u²)]
                    3 => -8.0 * a * (a - 1.0) * (a - 2.0) * u.powi(3) + 12.0 * a * (a - 1.0) * u * w,
                    _ => unreachable!(),
                }
            };
            for k in 0..=3 {
                let norm = rodrigues(k, 1.0);
                for &u in &[-0.9, -0.3, 0.1, 0.55, 0.99] {
                    let expect = rodrigues(k, u) / norm;
                    let got = gegenbauer_eval(d, k, d as f64 * u);
                    assert!((got - expect).abs() < 1e-12, "d={d} k={k} u={u}");
                }
            }
        }
    }
}
