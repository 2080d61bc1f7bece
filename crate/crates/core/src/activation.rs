//! Activation functions with weak derivatives and cached Hermite expansions.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{gaussian_expectation, normalized_hermite_coefficients};

/// Built-in activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
    Softplus,
    /// Heaviside step `1{x > 0}`, the weak derivative of ReLU.
    Step,
    /// `x^2`
    Quadratic,
    Constant(f64),
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Step => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Quadratic => x * x,
            Activation::Constant(c) => c,
        }
    }

    /// Weak (a.e.) derivative.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Step | Activation::Constant(_) => 0.0,
            Activation::Quadratic => 2.0 * x,
        }
    }

    /// Points where `σ` or `σ'` fail to be smooth.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::Relu | Activation::Step => &[0.0],
            _ => &[],
        }
    }

    /// Constants `(c0, c1)` with `σ(x)² ≤ c0 exp(c1 x²/2)` and the same for `σ'`.
    pub fn growth(self) -> (f64, f64) {
        match self {
            // x² ≤ 2/(e c1) exp(c1 x²/2)
            Activation::Relu | Activation::Identity => (2.0 / (0.1 * std::f64::consts::E), 0.1),
            Activation::Softplus => (20.0, 0.1),
            Activation::Tanh | Activation::Step => (1.0, 0.0),
            // x⁴ ≤ (4/(e c1))² exp(c1 x²/2)
            Activation::Quadratic => ((4.0 / (0.1 * std::f64::consts::E)).powi(2), 0.1),
            Activation::Constant(c) => (c * c, 0.0),
        }
    }

    pub fn name(self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::Identity => "identity".into(),
            Activation::Tanh => "tanh".into(),
            Activation::Softplus => "softplus".into(),
            Activation::Step => "step".into(),
            Activation::Quadratic => "quadratic".into(),
            Activation::Constant(c) => format!("constant({c})"),
        }
    }

    /// Parses the names produced by [`Activation::name`].
    pub fn from_name(name: &str) -> Result<Self> {
        let s = name.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "relu" => Activation::Relu,
            "identity" | "linear" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "softplus" => Activation::Softplus,
            "step" => Activation::Step,
            "quadratic" => Activation::Quadratic,
            _ => {
                let c = s
                    .strip_prefix("constant(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown activation {name:?}")))?;
                Activation::Constant(c)
            }
        })
    }
}

/// Gaussian moments used as exact kernel endpoint values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    /// `E[σ(G)²]`
    pub second: f64,
    /// `E[σ(G) σ(-G)]`
    pub cross: f64,
    /// `E[σ'(G)²]`
    pub derivative_second: f64,
    /// `E[σ'(G) σ'(-G)]`
    pub derivative_cross: f64,
}

/// Cache tiers for Hermite coefficients.
const TIERS: [usize; 3] = [64, 512, 4096];

type Cache = [OnceLock<std::result::Result<Vec<f64>, String>>; 3];

/// An activation with lazily computed, write-once Hermite coefficient caches
/// for `σ` and `σ'`. Safe to share across threads.
#[derive(Clone)]
pub struct ActivationSpec {
    activation: Activation,
    value_cache: Cache,
    derivative_cache: Cache,
    moments: OnceLock<std::result::Result<Moments, String>>,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec").field("activation", &self.activation).finish()
    }
}

impl PartialEq for ActivationSpec {
    fn eq(&self, other: &Self) -> bool {
        self.activation == other.activation
    }
}

impl From<Activation> for ActivationSpec {
    fn from(a: Activation) -> Self {
        Self::new(a)
    }
}

impl ActivationSpec {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            value_cache: Default::default(),
            derivative_cache: Default::default(),
            moments: OnceLock::new(),
        }
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn name(&self) -> String {
        self.activation.name()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.activation.eval(x)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.activation.derivative(x)
    }

    pub fn kinks(&self) -> &'static [f64] {
        self.activation.kinks()
    }

    pub fn growth(&self) -> (f64, f64) {
        self.activation.growth()
    }

    /// Normalized coefficients `μ_k(σ)/sqrt(k!)` for `k = 0..=max_k` (possibly more).
    pub fn hermite_coefficients(&self, max_k: usize) -> Result<&[f64]> {
        let act = self.activation;
        cached(&self.value_cache, max_k, &move |x| act.eval(x), act.kinks(), act.growth().1)
    }

    /// Normalized coefficients `μ_k(σ')/sqrt(k!)` for `k = 0..=max_k` (possibly more).
    pub fn derivative_hermite_coefficients(&self, max_k: usize) -> Result<&[f64]> {
        let act = self.activation;
        cached(
            &self.derivative_cache,
            max_k,
            &move |x| act.derivative(x),
            act.kinks(),
            act.growth().1,
        )
    }

    pub fn moments(&self) -> Result<Moments> {
        let act = self.activation;
        self.moments
            .get_or_init(|| {
                let mut kinks: Vec<f64> = act.kinks().to_vec();
                kinks.extend(act.kinks().iter().map(|k| -k));
                let m = Moments {
                    second: gaussian_expectation(|x| act.eval(x).powi(2), &kinks),
                    cross: gaussian_expectation(|x| act.eval(x) * act.eval(-x), &kinks),
                    derivative_second: gaussian_expectation(|x| act.derivative(x).powi(2), &kinks),
                    derivative_cross: gaussian_expectation(
                        |x| act.derivative(x) * act.derivative(-x),
                        &kinks,
                    ),
                };
                let all = [m.second, m.cross, m.derivative_second, m.derivative_cross];
                if all.iter().all(|v| v.is_finite()) {
                    Ok(m)
                } else {
                    Err(format!("non-finite Gaussian moments for {}", act.name()))
                }
            })
            .clone()
            .map_err(Error::Accuracy)
    }
}

fn cached<'a>(
    cache: &'a Cache,
    max_k: usize,
    f: &dyn Fn(f64) -> f64,
    kinks: &[f64],
    growth: f64,
) -> Result<&'a [f64]> {
    let tier = TIERS
        .iter()
        .position(|&t| t >= max_k)
        .ok_or_else(|| Error::Domain(format!("Hermite degree {max_k} exceeds {}", TIERS[2])))?;
    let entry = cache[tier].get_or_init(|| {
        normalized_hermite_coefficients(f, kinks, growth, TIERS[tier]).map_err(|e| e.to_string())
    });
    match entry {
        Ok(v) => Ok(v.as_slice()),
        Err(e) => Err(Error::Accuracy(e.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 7] = [
        Activation::Relu,
        Activation::Identity,
        Activation::Tanh,
        Activation::Softplus,
        Activation::Step,
        Activation::Quadratic,
        Activation::Constant(1.5),
    ];

    #[test]
    fn derivative_matches_finite_differences() {
        for act in ALL {
            for i in 0..200 {
                let x = -5.0 + 0.0503 * i as f64;
                if act.kinks().iter().any(|k| (x - k).abs() < 1e-3) {
                    continue;
                }
                let h = 1e-6;
                let fd = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-6, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn growth_certificates_hold() {
        for act in ALL {
            let (c0, c1) = act.growth();
            assert!(c1 < 1.0);
            for i in 0..400 {
                let x = -20.0 + 0.1 * i as f64;
                let bound = c0 * (c1 * x * x / 2.0).exp();
                assert!(act.eval(x).powi(2) <= bound * (1.0 + 1e-12), "{act:?} at {x}");
                assert!(act.derivative(x).powi(2) <= bound * (1.0 + 1e-12), "{act:?}' at {x}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for act in ALL {
            assert_eq!(Activation::from_name(&act.name()).unwrap(), act);
        }
        assert!(Activation::from_name("gelu").is_err());
    }

    #[test]
    fn relu_moments() {
        let m = ActivationSpec::new(Activation::Relu).moments().unwrap();
        assert!((m.second - 0.5).abs() < 1e-14);
        assert!(m.cross.abs() < 1e-14);
        assert!((m.derivative_second - 0.5).abs() < 1e-14);
        assert!(m.derivative_cross.abs() < 1e-14);
    }

    #[test]
    fn caches_agree_across_tiers() {
        let act = ActivationSpec::new(Activation::Softplus);
        let low = act.hermite_coefficients(10).unwrap().to_vec();
        let high = act.hermite_coefficients(300).unwrap();
        for k in 0..=10 {
            assert!((low[k] - high[k]).abs() < 1e-10);
        }
    }
}
