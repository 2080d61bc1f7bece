//! Limiting random-feature and neural-tangent kernels, kernel matrices,
//! Gegenbauer spectra and effective dimensions.
//!
//! `h_RF(t) = Σ c_k² t^k` and `h_NT(t) = t Σ c'_k² t^k`, where `c_k` and `c'_k`
//! are the normalized Hermite coefficients of `σ` and `σ'`. Series are
//! truncated adaptively: every coefficient is nonnegative, so the tail beyond
//! degree `K` is bounded by `(h(1) - S_K(1)) |t|^{K+1}`, with `h(1)` known
//! exactly from one-dimensional quadrature. Arguments too close to `±1` for
//! any cached truncation fall back to two-dimensional quadrature.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{Activation, ActivationSpec};
use crate::error::{domain, shape, Error, Result};
use crate::geometry::SphereModelParams;
use crate::harmonics::{
    composite_rule, dim_spherical_harmonics_f64, gaussian_density, gegenbauer_project_piecewise,
    try_gegenbauer_project,
};
use crate::linalg::PackedSymmetric;

/// Largest admissible truncation error of the series path.
pub const SERIES_TOLERANCE: f64 = 1e-10;

/// Truncation degrees tried in order; the first certified one is used.
const RUNGS: [usize; 13] = [8, 16, 24, 32, 48, 64, 96, 128, 256, 512, 1024, 2048, 4096];
const TIERS: [usize; 3] = [64, 512, 4096];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rf,
    Nt,
    /// `E[σ'(u) σ'(v)]`, the factor multiplying `t` in the NT kernel.
    NtDerivative,
    /// A finite power series `Σ a_k t^k` given explicitly.
    CustomSeries,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rf => "rf",
            KernelKind::Nt => "nt",
            KernelKind::NtDerivative => "ntd",
            KernelKind::CustomSeries => "custom",
        }
    }
}

#[derive(Clone, Debug)]
struct Tier {
    coeffs: Vec<f64>,
    /// `(K, radius)`: truncation at `K` is certified for `|t| <= radius`.
    rungs: Vec<(usize, f64)>,
}

/// A rotationally invariant dot-product kernel `h(<x, y> / ρ²)`.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    kind: KernelKind,
    activation: Arc<ActivationSpec>,
    custom: Vec<f64>,
    tiers: [OnceLock<std::result::Result<Tier, String>>; 3],
}

impl From<Activation> for Arc<ActivationSpec> {
    fn from(a: Activation) -> Self {
        Arc::new(ActivationSpec::new(a))
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind, activation: impl Into<Arc<ActivationSpec>>) -> Self {
        Self {
            kind,
            activation: activation.into(),
            custom: Vec::new(),
            tiers: Default::default(),
        }
    }

    pub fn rf(activation: impl Into<Arc<ActivationSpec>>) -> Self {
        Self::new(KernelKind::Rf, activation)
    }

    pub fn nt(activation: impl Into<Arc<ActivationSpec>>) -> Self {
        Self::new(KernelKind::Nt, activation)
    }

    pub fn nt_derivative(activation: impl Into<Arc<ActivationSpec>>) -> Self {
        Self::new(KernelKind::NtDerivative, activation)
    }

    /// `h(t) = Σ coeffs[k] t^k`. Coefficients must be nonnegative (up to
    /// `-1e-12`) for `h` to be positive semidefinite on every sphere.
    pub fn custom_series(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(domain("custom series needs at least one coefficient"));
        }
        if let Some(c) = coeffs.iter().find(|c| !c.is_finite() || **c < -1e-12) {
            return Err(domain(format!("series coefficient {c} breaks positive semidefiniteness")));
        }
        Ok(Self {
            kind: KernelKind::CustomSeries,
            activation: Activation::Identity.into(),
            custom: coeffs,
            tiers: Default::default(),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn activation(&self) -> &Arc<ActivationSpec> {
        &self.activation
    }

    pub fn name(&self) -> String {
        match self.kind {
            KernelKind::CustomSeries => "custom".into(),
            k => format!("{}_{}", k.name(), self.activation.name()),
        }
    }

    fn tier(&self, i: usize) -> Result<&Tier> {
        let entry = self.tiers[i].get_or_init(|| self.build_tier(i).map_err(|e| e.to_string()));
        entry.as_ref().map_err(|e| Error::Accuracy(e.clone()))
    }

    fn build_tier(&self, i: usize) -> Result<Tier> {
        let top = TIERS[i];
        let (c, total) = match self.kind {
            KernelKind::Rf => (self.activation.hermite_coefficients(top)?, self.activation.moments()?.second),
            KernelKind::Nt | KernelKind::NtDerivative => (
                self.activation.derivative_hermite_coefficients(top)?,
                self.activation.moments()?.derivative_second,
            ),
            KernelKind::CustomSeries => unreachable!("custom series are evaluated exactly"),
        };
        let coeffs: Vec<f64> = c[..=top].iter().map(|c| c * c).collect();
        let lo = if i == 0 { 0 } else { TIERS[i - 1] };
        let mut partial = 0.0;
        let mut next = 0;
        let mut rungs = Vec::new();
        for &k in RUNGS.iter().filter(|&&k| k > lo && k <= top) {
            while next <= k {
                partial += coeffs[next];
                next += 1;
            }
            let tail = (total - partial).max(0.0) + 1e-14;
            let radius = (SERIES_TOLERANCE / tail).powf(1.0 / (k + 1) as f64).min(1.0);
            rungs.push((k, radius));
        }
        Ok(Tier { coeffs, rungs })
    }

    /// Power-series coefficients of `h` in `t` up to degree `max_k`.
    pub fn series_coefficients(&self, max_k: usize) -> Result<Vec<f64>> {
        Ok(match self.kind {
            KernelKind::CustomSeries => (0..=max_k).map(|k| self.custom.get(k).copied().unwrap_or(0.0)).collect(),
            KernelKind::Rf => {
                let c = if max_k <= TIERS[2] {
                    self.activation.hermite_coefficients(max_k)?
                } else {
                    return Err(domain(format!("series degree {max_k} exceeds {}", TIERS[2])));
                };
                c[..=max_k].iter().map(|c| c * c).collect()
            }
            KernelKind::Nt => {
                if max_k > TIERS[2] {
                    return Err(domain(format!("series degree {max_k} exceeds {}", TIERS[2])));
                }
                let c = self.activation.derivative_hermite_coefficients(max_k.max(1))?;
                std::iter::once(0.0).chain(c[..max_k].iter().map(|c| c * c)).collect()
            }
            KernelKind::NtDerivative => {
                if max_k > TIERS[2] {
                    return Err(domain(format!("series degree {max_k} exceeds {}", TIERS[2])));
                }
                let c = self.activation.derivative_hermite_coefficients(max_k)?;
                c[..=max_k].iter().map(|c| c * c).collect()
            }
        })
    }

    /// `(h(1), h(-1))`
    pub fn endpoints(&self) -> Result<(f64, f64)> {
        Ok(match self.kind {
            KernelKind::CustomSeries => (horner(&self.custom, 1.0), horner(&self.custom, -1.0)),
            KernelKind::Rf => {
                let m = self.activation.moments()?;
                (m.second, m.cross)
            }
            KernelKind::Nt => {
                let m = self.activation.moments()?;
                (m.derivative_second, -m.derivative_cross)
            }
            KernelKind::NtDerivative => {
                let m = self.activation.moments()?;
                (m.derivative_second, m.derivative_cross)
            }
        })
    }

    /// `h(t)` for `t ∈ [-1, 1]`; arguments within `1e-8` outside are clamped.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t.abs() > 1.0 + 1e-8 {
            return Err(domain(format!("kernel argument {t} outside [-1, 1]")));
        }
        let t = t.clamp(-1.0, 1.0);
        if self.kind == KernelKind::CustomSeries {
            return Ok(horner(&self.custom, t));
        }
        let at = t.abs();
        if at >= 1.0 - 1e-12 {
            let (plus, minus) = self.endpoints()?;
            return Ok(if t > 0.0 { plus } else { minus });
        }
        for i in 0..TIERS.len() {
            let tier = self.tier(i)?;
            if let Some(&(k, _)) = tier.rungs.iter().find(|(_, radius)| at <= *radius) {
                let g = horner(&tier.coeffs[..=k], t);
                return Ok(if self.kind == KernelKind::Nt { t * g } else { g });
            }
        }
        Ok(self.eval_by_quadrature(t))
    }

    /// `h(t)` from the defining Gaussian expectation; slow but valid up to `|t| = 1`.
    pub fn eval_by_quadrature(&self, t: f64) -> f64 {
        let act = self.activation.activation();
        match self.kind {
            KernelKind::Rf => gaussian_pair_expectation(&|x| act.eval(x), &|x| act.eval(x), act.kinks(), t),
            KernelKind::Nt => {
                t * gaussian_pair_expectation(&|x| act.derivative(x), &|x| act.derivative(x), act.kinks(), t)
            }
            KernelKind::NtDerivative => {
                gaussian_pair_expectation(&|x| act.derivative(x), &|x| act.derivative(x), act.kinks(), t)
            }
            KernelKind::CustomSeries => horner(&self.custom, t),
        }
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

/// `E[f(G1) g(t G1 + sqrt(1-t²) G2)]` for independent standard Gaussians,
/// by nested composite Gauss–Legendre split at the kinks of `f` and `g`.
pub fn gaussian_pair_expectation(f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, kinks: &[f64], t: f64) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    let s = (1.0 - t * t).max(0.0).sqrt();
    const L: f64 = 14.0;
    let mut outer_cuts: Vec<f64> = kinks.to_vec();
    if t != 0.0 {
        // the inner average is smooth in G1 on the scale s/|t| around G1 = kink/t
        for &k in kinks {
            let c = k / t;
            outer_cuts.push(c);
            for j in [1.0, 2.0, 4.0, 8.0, 16.0] {
                outer_cuts.push(c + j * s / t.abs());
                outer_cuts.push(c - j * s / t.abs());
            }
        }
    }
    let (x1, w1) = composite_rule(L, &outer_cuts, 1.0);
    let mut total = 0.0;
    let mut inner_cuts = Vec::with_capacity(kinks.len());
    for (&a, &wa) in x1.iter().zip(&w1) {
        let fa = f(a);
        if fa == 0.0 {
            continue;
        }
        let inner = if s == 0.0 {
            g(t * a)
        } else {
            inner_cuts.clear();
            inner_cuts.extend(kinks.iter().map(|k| (k - t * a) / s));
            let (x2, w2) = composite_rule(L, &inner_cuts, 1.0);
            x2.iter()
                .zip(&w2)
                .map(|(&b, &wb)| wb * gaussian_density(b) * g(t * a + s * b))
                .sum()
        };
        total += wa * gaussian_density(a) * fa * inner;
    }
    total
}

/// `h_RF(t) = E[σ(G1) σ(t G1 + sqrt(1-t²) G2)]`
pub fn limiting_kernel_rf(activation: &Arc<ActivationSpec>, t: f64) -> Result<f64> {
    KernelSpec::rf(activation.clone()).eval(t)
}

/// `h_NT(t) = t E[σ'(G1) σ'(t G1 + sqrt(1-t²) G2)]`
pub fn limiting_kernel_nt(activation: &Arc<ActivationSpec>, t: f64) -> Result<f64> {
    KernelSpec::nt(activation.clone()).eval(t)
}

/// Rows of `X` per block in blocked kernel assembly.
const BLOCK_ROWS: usize = 256;

fn map_entries(spec: &KernelSpec, values: &mut [f64], inv_radius_sq: f64) -> Result<()> {
    values.par_chunks_mut(4096).try_for_each(|chunk| {
        for v in chunk.iter_mut() {
            *v = spec.eval(*v * inv_radius_sq)?;
        }
        Ok(())
    })
}

/// `H_ij = h(<x_i, x2_j> / ρ²)` with `ρ² = radius_sq`; `x2 = None` means `X`
/// itself, in which case the result is exactly symmetric.
pub fn kernel_matrix(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    x2: Option<&DMatrix<f64>>,
    radius_sq: f64,
) -> Result<DMatrix<f64>> {
    if !(radius_sq > 0.0) {
        return Err(domain(format!("squared radius must be positive, got {radius_sq}")));
    }
    let inv = 1.0 / radius_sq;
    match x2 {
        Some(x2) => {
            if x2.ncols() != x.ncols() {
                return Err(shape(format!("{} vs {} columns", x.ncols(), x2.ncols())));
            }
            let mut g = x * x2.transpose();
            map_entries(spec, g.as_mut_slice(), inv)?;
            Ok(g)
        }
        None => {
            let mut g = x * x.transpose();
            let n = g.nrows();
            for j in 0..n {
                for i in 0..j {
                    g[(i, j)] = g[(j, i)];
                }
            }
            map_entries(spec, g.as_mut_slice(), inv)?;
            Ok(g)
        }
    }
}

/// Symmetric kernel matrix of `X` in packed lower-triangular storage,
/// assembled in row blocks so peak extra memory is `BLOCK_ROWS × n`.
pub fn kernel_matrix_packed(spec: &KernelSpec, x: &DMatrix<f64>, radius_sq: f64) -> Result<PackedSymmetric> {
    if !(radius_sq > 0.0) {
        return Err(domain(format!("squared radius must be positive, got {radius_sq}")));
    }
    let n = x.nrows();
    let inv = 1.0 / radius_sq;
    let mut out = PackedSymmetric::zeros(n);
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK_ROWS).min(n);
        let block = x.rows(start, end - start) * x.rows(0, end).transpose();
        let rows = out.rows_mut(start, end);
        let mut offset = 0;
        for i in start..end {
            let dst = &mut rows[offset..offset + i + 1];
            for (j, v) in dst.iter_mut().enumerate() {
                *v = block[(i - start, j)];
            }
            offset += i + 1;
        }
        map_entries(spec, rows, inv)?;
        start = end;
    }
    Ok(out)
}

/// `K(X_test, X_train) · coefficients` without materializing the full cross
/// kernel. `coefficients` is `n_train × m` (one column per fit).
pub fn kernel_cross_apply(
    spec: &KernelSpec,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    coefficients: &DMatrix<f64>,
    radius_sq: f64,
) -> Result<DMatrix<f64>> {
    if x_train.ncols() != x_test.ncols() {
        return Err(shape(format!("{} vs {} columns", x_train.ncols(), x_test.ncols())));
    }
    if coefficients.nrows() != x_train.nrows() {
        return Err(shape(format!(
            "{} coefficient rows for {} training points",
            coefficients.nrows(),
            x_train.nrows()
        )));
    }
    let (nt, m) = (x_test.nrows(), coefficients.ncols());
    let mut out = DMatrix::zeros(nt, m);
    let mut start = 0;
    while start < nt {
        let end = (start + BLOCK_ROWS).min(nt);
        let block = kernel_matrix(spec, &x_test.rows(start, end - start).into_owned(), Some(x_train), radius_sq)?;
        out.rows_mut(start, end - start).copy_from(&(block * coefficients));
        start = end;
    }
    Ok(out)
}

/// Gegenbauer expansion `h(<x,y>/d) = Σ_k λ_k B(d,k) Q_k(<x,y>)` on `S^{d-1}(sqrt d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCoefficients {
    pub d: usize,
    pub lambdas: Vec<f64>,
    pub dims: Vec<f64>,
    pub products: Vec<f64>,
}

impl KernelCoefficients {
    pub fn from_lambdas(d: usize, lambdas: Vec<f64>) -> Self {
        let dims: Vec<f64> = (0..lambdas.len()).map(|k| dim_spherical_harmonics_f64(d, k)).collect();
        let products = lambdas.iter().zip(&dims).map(|(l, b)| l * b).collect();
        Self { d, lambdas, dims, products }
    }

    /// CSV with columns `k, lambda_k, B_dk, product`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["k", "lambda_k", "B_dk", "product"])?;
        for k in 0..self.lambdas.len() {
            w.write_record(&[
                k.to_string(),
                format!("{:e}", self.lambdas[k]),
                format!("{}", self.dims[k]),
                format!("{:e}", self.products[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// `λ_k = E[h(t/d) Q_k(t)]` for `k <= max_k`. Negative values from
/// quadrature noise are clamped to zero (with a warning above `1e-10`).
pub fn kernel_gegenbauer_coefficients(spec: &KernelSpec, d: usize, max_k: usize) -> Result<KernelCoefficients> {
    if d < 3 {
        return Err(domain(format!("Gegenbauer coefficients need d >= 3, got {d}")));
    }
    let df = d as f64;
    let mut lambdas = try_gegenbauer_project(d, |t| spec.eval(t / df), max_k)?;
    for (k, l) in lambdas.iter_mut().enumerate() {
        if *l < 0.0 {
            if *l < -1e-10 {
                log::warn!("clamping λ_{k} = {l:e} of {} at d = {d} to zero", spec.name());
            }
            *l = 0.0;
        }
    }
    Ok(KernelCoefficients::from_lambdas(d, lambdas))
}

/// Gegenbauer coefficients `A_k` of the neural-tangent kernel on a single
/// sphere `S^{d-1}(sqrt d)` (radius convention `r² = d`):
/// `H(x, y) = E_θ[σ'(<θ,x>/sqrt d) σ'(<θ,y>/sqrt d)] <x, y> = Σ_k A_k Q_k(<x, y>)`,
/// with `A_k = d [t_{d,k-1} λ_{k-1}² B(d,k-1) + s_{d,k+1} λ_{k+1}² B(d,k+1)]`
/// and `λ_j` the coefficients of `t ↦ σ'(t / sqrt d)`.
pub fn nt_kernel_sphere_coefficients(activation: &ActivationSpec, d: usize, max_k: usize) -> Result<Vec<f64>> {
    if d < 3 {
        return Err(domain(format!("NT coefficients need d >= 3, got {d}")));
    }
    let df = d as f64;
    let sd = df.sqrt();
    let kinks: Vec<f64> = activation.kinks().iter().map(|k| k * sd).collect();
    let lam = gegenbauer_project_piecewise(d, |t| activation.derivative(t / sd), &kinks, max_k + 1)?;
    let energy = |j: usize| lam[j] * lam[j] * dim_spherical_harmonics_f64(d, j);
    let s = |k: usize| k as f64 / (2.0 * k as f64 + df - 2.0);
    let t = |k: usize| (k as f64 + df - 2.0) / (2.0 * k as f64 + df - 2.0);
    Ok((0..=max_k)
        .map(|k| {
            let lower = if k == 0 { 0.0 } else { t(k - 1) * energy(k - 1) };
            df * (lower + s(k + 1) * energy(k + 1))
        })
        .collect())
}

/// Effective dimension and parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDims {
    pub d_eff: f64,
    pub p_eff_rf: f64,
    pub p_eff_nt: f64,
}

/// `d_eff = d^{max(1-κ, η)}`, `p_eff = N` (RF) and `N d_eff` (NT).
pub fn effective_dimension(params: &SphereModelParams, n_neurons: usize) -> EffectiveDims {
    let d_eff = params.d_eff();
    EffectiveDims {
        d_eff,
        p_eff_rf: n_neurons as f64,
        p_eff_nt: n_neurons as f64 * d_eff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_synthetic_target, sample_dataset, sample_sphere};
    use crate::harmonics::{gegenbauer_eval, gegenbauer_project, gegenbauer_synthesize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn relu() -> Arc<ActivationSpec> {
        Activation::Relu.into()
    }

    #[test]
    fn nt_derivative_of_relu_is_step_kernel() {
        let ntd = KernelSpec::nt_derivative(Activation::Relu);
        let step = KernelSpec::rf(Activation::Step);
        let nt = KernelSpec::nt(Activation::Relu);
        for t in [-1.0, -0.97, -0.4, 0.0, 0.3, 0.995, 1.0] {
            let a = ntd.eval(t).unwrap();
            assert!((a - step.eval(t).unwrap()).abs() < 1e-9, "t = {t}");
            assert!((t * a - nt.eval(t).unwrap()).abs() < 1e-9);
            // arc-cosine kernel of degree 0
            assert!((a - (PI - t.acos()) / (2.0 * PI)).abs() < 1e-9);
        }
        assert_eq!(ntd.name(), "ntd_relu");
    }

    fn arccos_rf(t: f64) -> f64 {
        ((1.0 - t * t).sqrt() + (PI - t.acos()) * t) / (2.0 * PI)
    }

    fn arccos_nt(t: f64) -> f64 {
        t * (PI - t.acos()) / (2.0 * PI)
    }

    /// E[f(G1) g(t G1 + s G2)] in polar coordinates: angular integral split
    /// where either argument changes sign, radial Gauss–Legendre on [0, 14].
    fn polar_oracle(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, t: f64) -> f64 {
        let alpha = t.clamp(-1.0, 1.0).acos();
        let mut cuts = vec![0.0, 2.0 * PI];
        for c in [PI / 2.0, 3.0 * PI / 2.0, alpha + PI / 2.0, alpha + 3.0 * PI / 2.0] {
            cuts.push(c.rem_euclid(2.0 * PI));
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (gx, gw) = crate::harmonics::gauss_legendre(48);
        let (rx, rw) = composite_rule(14.0, &[0.0], 0.5);
        let mut total = 0.0;
        for (&r, &wr) in rx.iter().zip(&rw) {
            if r <= 0.0 {
                continue;
            }
            let radial = r * (-0.5 * r * r).exp() / (2.0 * PI);
            for seg in cuts.windows(2) {
                let (a, b) = (seg[0], seg[1]);
                if b - a < 1e-15 {
                    continue;
                }
                for (&x, &w) in gx.iter().zip(&gw) {
                    let th = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    let val = f(r * th.cos()) * g(r * (th - alpha).cos());
                    total += wr * radial * 0.5 * (b - a) * w * val;
                }
            }
        }
        total
    }

    #[test]
    fn identity_kernels() {
        let id: Arc<ActivationSpec> = Activation::Identity.into();
        for &t in &[-1.0, -0.3, 0.0, 0.8, 1.0] {
            assert!((limiting_kernel_rf(&id, t).unwrap() - t).abs() < 1e-12);
            assert!((limiting_kernel_nt(&id, t).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_examples() {
        let a = relu();
        assert!((limiting_kernel_rf(&a, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((limiting_kernel_rf(&a, 0.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-12);
        assert!((limiting_kernel_nt(&a, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(limiting_kernel_nt(&a, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn relu_matches_arc_cosine_everywhere() {
        let rf = KernelSpec::rf(relu());
        let nt = KernelSpec::nt(relu());
        let mut ts: Vec<f64> = (0..=200).map(|i| -1.0 + 0.01 * i as f64).collect();
        ts.extend([0.995, 0.999, 0.9999, 1.0 - 1e-7, -0.9993, -1.0 + 1e-9]);
        for t in ts {
            assert!((rf.eval(t).unwrap() - arccos_rf(t)).abs() < 1e-9, "rf at {t}");
            assert!((nt.eval(t).unwrap() - arccos_nt(t)).abs() < 1e-9, "nt at {t}");
        }
    }

    #[test]
    fn series_agrees_with_polar_quadrature() {
        let rf = KernelSpec::rf(relu());
        let nt = KernelSpec::nt(relu());
        let step = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
        for &t in &[-0.99, -0.5, 0.0, 0.5, 0.99] {
            let o_rf = polar_oracle(|x| x.max(0.0), |x| x.max(0.0), t);
            let o_nt = t * polar_oracle(step, step, t);
            assert!((rf.eval(t).unwrap() - o_rf).abs() < 1e-6, "rf at {t}");
            assert!((nt.eval(t).unwrap() - o_nt).abs() < 1e-6, "nt at {t}");
        }
        let tanh = KernelSpec::rf(Arc::new(ActivationSpec::new(Activation::Tanh)));
        for &t in &[-0.9, 0.3, 0.97] {
            let o = polar_oracle(f64::tanh, f64::tanh, t);
            assert!((tanh.eval(t).unwrap() - o).abs() < 1e-6, "tanh at {t}");
        }
    }

    #[test]
    fn quadrature_fallback_matches_series() {
        for spec in [KernelSpec::rf(relu()), KernelSpec::nt(relu()), KernelSpec::nt(Activation::Softplus)] {
            for &t in &[-0.95, -0.2, 0.4, 0.9] {
                let (a, b) = (spec.eval(t).unwrap(), spec.eval_by_quadrature(t));
                assert!((a - b).abs() < 1e-10, "{} at {t}: {a} vs {b}", spec.name());
            }
        }
    }

    #[test]
    fn argument_domain() {
        let spec = KernelSpec::rf(relu());
        assert!(spec.eval(1.0 + 1e-9).is_ok());
        assert!(matches!(spec.eval(1.01), Err(Error::Domain(_))));
        assert!(spec.eval(f64::NAN).is_err());
    }

    #[test]
    fn custom_series_validation() {
        assert!(KernelSpec::custom_series(vec![1.0, -0.1]).is_err());
        assert!(KernelSpec::custom_series(vec![]).is_err());
        let s = KernelSpec::custom_series(vec![1.0, 0.0, 2.0]).unwrap();
        assert_eq!(s.eval(0.5).unwrap(), 1.5);
        assert_eq!(s.series_coefficients(4).unwrap(), vec![1.0, 0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn nt_series_is_shifted() {
        let s = KernelSpec::nt(relu()).series_coefficients(3).unwrap();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.25).abs() < 1e-12);
        assert!((s[2] - 1.0 / (2.0 * PI)).abs() < 1e-12);
        assert!(s[3].abs() < 1e-12);
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn kernel_matrix_examples() {
        let d = 6;
        let x = sample_sphere(d, (d as f64).sqrt(), 10, &mut rng(1)).unwrap();
        let spec = KernelSpec::rf(relu());
        let h = kernel_matrix(&spec, &x, None, d as f64).unwrap();
        for i in 0..10 {
            assert!((h[(i, i)] - 0.5).abs() < 1e-12);
            for j in 0..10 {
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
        let lin = KernelSpec::rf(Arc::new(ActivationSpec::new(Activation::Identity)));
        let h = kernel_matrix(&lin, &x, None, d as f64).unwrap();
        let expect = &x * x.transpose() / d as f64;
        assert!((h - expect).amax() < 1e-12);

        let mut pair = DMatrix::zeros(2, d);
        pair.row_mut(0).copy_from(&x.row(0));
        pair.row_mut(1).copy_from(&(-x.row(0)));
        let h = kernel_matrix(&spec, &pair, None, d as f64).unwrap();
        assert!(h[(0, 1)].abs() < 1e-12, "ReLU h(-1) = 0");
        let h = kernel_matrix(&KernelSpec::rf(Activation::Tanh), &pair, None, d as f64).unwrap();
        let (_, minus) = KernelSpec::rf(Activation::Tanh).endpoints().unwrap();
        assert!((h[(0, 1)] - minus).abs() < 1e-12);

        assert!(kernel_matrix(&spec, &x, Some(&DMatrix::zeros(3, d + 1)), d as f64).is_err());
        assert!(kernel_matrix(&spec, &(&x * 2.0), None, d as f64).is_err());
    }

    #[test]
    fn packed_and_cross_assembly_agree_with_dense() {
        let d = 9;
        let x = sample_sphere(d, 3.0, 600, &mut rng(2)).unwrap();
        let t = sample_sphere(d, 3.0, 300, &mut rng(3)).unwrap();
        let spec = KernelSpec::nt(relu());
        let dense = kernel_matrix(&spec, &x, None, 9.0).unwrap();
        let packed = kernel_matrix_packed(&spec, &x, 9.0).unwrap();
        assert!((packed.to_dense() - &dense).amax() < 1e-14);
        let coef = DMatrix::from_fn(600, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let direct = kernel_matrix(&spec, &t, Some(&x), 9.0).unwrap() * &coef;
        let blocked = kernel_cross_apply(&spec, &x, &t, &coef, 9.0).unwrap();
        assert!((direct - blocked).amax() < 1e-10);
    }

    #[test]
    fn kernel_matrices_are_psd() {
        let p = SphereModelParams::new(64, 0.5, 0.6, 0.0, 3).unwrap();
        let target = make_synthetic_target(p.d0(), &[2], &mut rng(1)).unwrap();
        let ds = sample_dataset(&p, &target, 200).unwrap();
        for spec in [KernelSpec::rf(relu()), KernelSpec::nt(relu())] {
            let h = kernel_matrix(&spec, &ds.x, None, p.radius_sq()).unwrap();
            let trace = h.trace();
            let min = h.symmetric_eigenvalues().min();
            assert!(min >= -1e-8 * trace / 200.0, "{}: {min}", spec.name());
        }
    }

    #[test]
    fn identity_gegenbauer_coefficients() {
        let spec = KernelSpec::rf(Arc::new(ActivationSpec::new(Activation::Identity)));
        let c = kernel_gegenbauer_coefficients(&spec, 30, 5).unwrap();
        assert!((c.products[1] - 1.0).abs() < 1e-12);
        for k in [0, 2, 3, 4, 5] {
            assert!(c.products[k].abs() < 1e-12);
        }
    }

    #[test]
    fn relu_coefficients_converge() {
        let spec = KernelSpec::rf(relu());
        let c = kernel_gegenbauer_coefficients(&spec, 500, 3).unwrap();
        assert!((c.products[1] - 0.25).abs() < 0.025);
        assert!(c.lambdas.iter().all(|l| *l >= -1e-10));

        let limits = spec.series_coefficients(3).unwrap();
        let gaps: Vec<Vec<f64>> = [100usize, 300, 1000]
            .iter()
            .map(|&d| {
                let c = kernel_gegenbauer_coefficients(&spec, d, 3).unwrap();
                c.products.iter().zip(&limits).map(|(p, l)| (p - l).abs()).collect()
            })
            .collect();
        // ReLU has no odd Hermite content beyond degree one, so the k = 1 and
        // k = 3 entries are exact at every d and only the even ones move.
        let shrinks = |a: f64, b: f64| b < a || (a < 1e-12 && b < 1e-12);
        for k in 0..=3 {
            assert!(gaps[2][k] <= 0.1 * limits[k] + 1e-12, "k={k}: {gaps:?}");
            assert!(shrinks(gaps[0][k], gaps[1][k]) && shrinks(gaps[1][k], gaps[2][k]), "k={k}: {gaps:?}");
        }
    }

    #[test]
    fn synthesis_reconstructs_smooth_kernel() {
        let coeffs: Vec<f64> = (0..=10).map(|k| 0.5f64.powi(k) / (1..=k).product::<i32>().max(1) as f64).collect();
        let spec = KernelSpec::custom_series(coeffs).unwrap();
        let d = 50;
        let c = kernel_gegenbauer_coefficients(&spec, d, 10).unwrap();
        let mut g = rng(9);
        for _ in 0..50 {
            let u: f64 = rand::Rng::gen_range(&mut g, -(d as f64)..d as f64);
            let back = gegenbauer_synthesize(d, &c.lambdas, u);
            assert!((back - spec.eval(u / d as f64).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn coefficients_csv() {
        let c = KernelCoefficients::from_lambdas(5, vec![1.0, 0.2]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,lambda_k,B_dk,product\n0,1e0,1,1e0\n1,2e-1,5,"));
    }

    #[test]
    fn nt_sphere_coefficients_identity() {
        let a = ActivationSpec::new(Activation::Identity);
        let d = 12;
        let coef = nt_kernel_sphere_coefficients(&a, d, 4).unwrap();
        assert!(coef[0].abs() < 1e-12);
        assert!((coef[1] - d as f64).abs() < 1e-10);
        assert!(coef[2..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn nt_sphere_coefficients_match_direct_projection() {
        // H(t) = t Σ_j λ_j² B_j Q_j(t), projected directly
        let act = ActivationSpec::new(Activation::Tanh);
        let d = 15;
        let sd = (d as f64).sqrt();
        let max_k = 8;
        let lam = gegenbauer_project(d, |t| act.derivative(t / sd), max_k + 6).unwrap();
        let h = |t: f64| {
            t * lam
                .iter()
                .enumerate()
                .map(|(j, l)| l * l * dim_spherical_harmonics_f64(d, j) * gegenbauer_eval(d, j, t))
                .sum::<f64>()
        };
        let direct = gegenbauer_project(d, h, max_k).unwrap();
        let a = nt_kernel_sphere_coefficients(&act, d, max_k).unwrap();
        for k in 0..=max_k {
            let expect = direct[k] * dim_spherical_harmonics_f64(d, k);
            assert!((a[k] - expect).abs() < 1e-9 * (1.0 + expect.abs()), "k={k}");
        }
        // A_0 uses only the upper neighbour
        let s1 = 1.0 / (d as f64);
        assert!((a[0] - d as f64 * s1 * lam[1] * lam[1] * d as f64).abs() < 1e-12);
    }

    #[test]
    fn nt_sphere_trace_identity() {
        let d = 20;
        let sd = (d as f64).sqrt();
        let pts = sample_sphere(d, sd, 1_000_000, &mut rng(10)).unwrap();
        for (act, max_k, tol) in [(Activation::Tanh, 30, 5e-3), (Activation::Relu, 60, 1e-2)] {
            let spec = ActivationSpec::new(act);
            let vals: Vec<f64> = pts.column(0).iter().map(|x| spec.derivative(*x).powi(2)).collect();
            let mc = vals.iter().sum::<f64>() / vals.len() as f64;
            let a = nt_kernel_sphere_coefficients(&spec, d, max_k).unwrap();
            let sum: f64 = a.iter().sum::<f64>() / d as f64;
            assert!((sum - mc).abs() < tol, "{act:?}: {sum} vs {mc}");
        }
    }

    #[test]
    fn effective_dimension_regimes() {
        let p = SphereModelParams::new(1024, 0.4, 0.0, 0.0, 0).unwrap();
        assert!((effective_dimension(&p, 1).d_eff - 1024.0).abs() < 1e-9);
        let e = effective_dimension(&p.with_kappa(0.7), 10);
        assert!((e.d_eff - 1024f64.powf(0.4)).abs() < 1e-9);
        assert_eq!(e.p_eff_rf, 10.0);
        assert!((e.p_eff_nt - 10.0 * e.d_eff).abs() < 1e-9);
        assert!((effective_dimension(&p.with_kappa(0.3), 1).d_eff - 1024f64.powf(0.7)).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let de = p.with_kappa(0.1 * i as f64).d_eff();
            assert!(de <= prev);
            if 0.1 * i as f64 >= 0.6 {
                assert!((de - 1024f64.powf(0.4)).abs() < 1e-9);
            }
            prev = de;
        }
    }
}
