//! The anisotropic product-of-spheres data model and synthetic targets.
//!
//! A covariate is `x = [z0 | z1]` with `z0` uniform on `S^{d0-1}(r sqrt(d0))`
//! and `z1` uniform on `S^{d-d0-1}(sqrt(d-d0))`, where `d0 = ⌊d^η⌋` and
//! `r = d^{κ/2}`. Labels depend on `z0 / r` only, a point of the latent
//! sphere `S^{d0-1}(sqrt(d0))`, so one target serves every `κ`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};
use crate::rng::{self, stream};

/// Parameters of the anisotropic sphere model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereModelParams {
    pub d: usize,
    pub eta: f64,
    pub kappa: f64,
    #[serde(default)]
    pub noise_tau: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SphereModelParams {
    pub fn new(d: usize, eta: f64, kappa: f64, noise_tau: f64, seed: u64) -> Result<Self> {
        let p = Self { d, eta, kappa, noise_tau, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(domain(format!("d must be >= 2, got {}", self.d)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(domain(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(domain(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.noise_tau >= 0.0 && self.noise_tau.is_finite()) {
            return Err(domain(format!("noise_tau must be >= 0, got {}", self.noise_tau)));
        }
        let d0 = self.d0();
        if d0 < 1 || d0 >= self.d {
            return Err(domain(format!("latent dimension d0 = {d0} must satisfy 1 <= d0 < d = {}", self.d)));
        }
        Ok(())
    }

    /// `⌊d^η⌋`, with a small guard so exact powers are not rounded down.
    pub fn d0(&self) -> usize {
        ((self.d as f64).powf(self.eta) + 1e-9).floor() as usize
    }

    /// `d^{κ/2}`
    pub fn r(&self) -> f64 {
        (self.d as f64).powf(self.kappa / 2.0)
    }

    /// Exact squared row norm `r² d0 + (d - d0)`.
    pub fn radius_sq(&self) -> f64 {
        let d0 = self.d0() as f64;
        self.r().powi(2) * d0 + (self.d as f64 - d0)
    }

    /// `d^{max(1-κ, η)}`
    pub fn d_eff(&self) -> f64 {
        (self.d as f64).powf((1.0 - self.kappa).max(self.eta))
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The two spheres of the model as a product-sphere description.
    pub fn product_spheres(&self) -> ProductSphereParams {
        let d0 = self.d0();
        let rest = self.d - d0;
        ProductSphereParams {
            spheres: vec![
                (d0, self.r() * (d0 as f64).sqrt()),
                (rest, (rest as f64).sqrt()),
            ],
        }
    }
}

/// A product of spheres `S^{d_1-1}(r_1) × ... × S^{d_Q-1}(r_Q)`; each entry is `(d_q, r_q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductSphereParams {
    pub spheres: Vec<(usize, f64)>,
}

impl ProductSphereParams {
    pub fn validate(&self) -> Result<()> {
        if self.spheres.is_empty() {
            return Err(domain("product of spheres needs at least one factor"));
        }
        for &(dq, rq) in &self.spheres {
            if dq < 1 || !(rq > 0.0) {
                return Err(domain(format!("invalid sphere factor (dim {dq}, radius {rq})")));
            }
        }
        Ok(())
    }

    /// `D = Σ d_q`
    pub fn total_dim(&self) -> usize {
        self.spheres.iter().map(|s| s.0).sum()
    }

    /// `R² = Σ r_q²`
    pub fn radius_sq(&self) -> f64 {
        self.spheres.iter().map(|s| s.1 * s.1).sum()
    }
}

/// Fills `out` with a uniform point of the sphere of the given radius.
fn fill_sphere<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], radius: f64) {
    loop {
        let mut norm_sq = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            norm_sq += *v * *v;
        }
        if norm_sq > 0.0 {
            let s = radius / norm_sq.sqrt();
            out.iter_mut().for_each(|v| *v *= s);
            return;
        }
    }
}

/// `count` i.i.d. rows uniform on `S^{dim-1}(radius)`.
pub fn sample_sphere<R: Rng + ?Sized>(dim: usize, radius: f64, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if dim < 1 || !(radius > 0.0) {
        return Err(domain(format!("sphere of dim {dim} and radius {radius}")));
    }
    let mut data = vec![0.0; dim * count];
    for row in data.chunks_exact_mut(dim) {
        fill_sphere(rng, row, radius);
    }
    Ok(DMatrix::from_row_slice(count, dim, &data))
}

/// Rows that concatenate independent uniform draws on each sphere factor.
pub fn sample_product_spheres<R: Rng + ?Sized>(
    params: &ProductSphereParams,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    if n < 1 {
        return Err(domain("need n >= 1"));
    }
    let dim = params.total_dim();
    let mut data = vec![0.0; dim * n];
    for row in data.chunks_exact_mut(dim) {
        fill_product_row(params, row, rng);
    }
    Ok(DMatrix::from_row_slice(n, dim, &data))
}

fn fill_product_row<R: Rng + ?Sized>(params: &ProductSphereParams, row: &mut [f64], rng: &mut R) {
    let mut start = 0;
    for &(dq, rq) in &params.spheres {
        fill_sphere(rng, &mut row[start..start + dq], rq);
        start += dq;
    }
}

/// One component `Σ_j α_j Π_{k=j}^{j+m-1} x_k` of a target, times `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetComponent {
    /// Window length, equal to the polynomial degree.
    pub degree: usize,
    pub alpha: Vec<f64>,
    /// Makes the component unit-norm on the latent sphere.
    pub scale: f64,
}

/// A sum of orthogonal multilinear harmonic components on `S^{d0-1}(sqrt(d0))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub d0: usize,
    pub components: Vec<TargetComponent>,
    /// `‖P_m φ‖²` for each degree `m` present.
    pub per_degree_energy: BTreeMap<usize, f64>,
}

/// `E[x_1² ⋯ x_m²]` for `x` uniform on `S^{d0-1}(sqrt(d0))`.
pub fn multilinear_second_moment(d0: usize, m: usize) -> f64 {
    let d0f = d0 as f64;
    (0..m).map(|i| d0f / (d0f + 2.0 * i as f64)).product()
}

impl TargetSpec {
    /// Builds a target from `(window length, α)` pairs, normalizing each
    /// component to `‖component‖² = energy`.
    pub fn from_windows(d0: usize, windows: Vec<(usize, Vec<f64>, f64)>) -> Result<Self> {
        let mut components = Vec::with_capacity(windows.len());
        let mut per_degree_energy = BTreeMap::new();
        for (m, alpha, energy) in windows {
            if m < 1 || m > d0 {
                return Err(domain(format!("window length {m} must lie in 1..={d0}")));
            }
            if alpha.len() != d0 - m + 1 {
                return Err(shape(format!(
                    "window length {m} on d0 = {d0} needs {} coefficients, got {}",
                    d0 - m + 1,
                    alpha.len()
                )));
            }
            if per_degree_energy.contains_key(&m) {
                return Err(domain(format!("window length {m} given twice")));
            }
            let norm_sq: f64 = alpha.iter().map(|a| a * a).sum::<f64>() * multilinear_second_moment(d0, m);
            let scale = if norm_sq > 0.0 { (energy / norm_sq).sqrt() } else { 0.0 };
            per_degree_energy.insert(m, if norm_sq > 0.0 { energy } else { 0.0 });
            components.push(TargetComponent { degree: m, alpha, scale });
        }
        Ok(Self { d0, components, per_degree_energy })
    }

    /// `‖φ‖²`
    pub fn norm_sq(&self) -> f64 {
        self.per_degree_energy.values().sum()
    }

    /// `‖P_{>ℓ} φ‖²`
    pub fn energy_above(&self, ell: usize) -> f64 {
        self.per_degree_energy.range(ell + 1..).fold(0.0, |acc, (_, e)| acc + e)
    }

    pub fn max_degree(&self) -> usize {
        self.per_degree_energy.keys().next_back().copied().unwrap_or(0)
    }

    /// `φ(z)` at one latent point.
    pub fn eval_point(&self, z: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let s: f64 = c
                    .alpha
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| **a != 0.0)
                    .map(|(j, a)| a * z[j..j + c.degree].iter().product::<f64>())
                    .sum();
                c.scale * s
            })
            .sum()
    }

    /// `P_m φ(z)`: only the degree-`m` component.
    pub fn eval_degree(&self, m: usize, z: &[f64]) -> f64 {
        self.components
            .iter()
            .filter(|c| c.degree == m)
            .map(|c| {
                c.scale
                    * c.alpha
                        .iter()
                        .enumerate()
                        .map(|(j, a)| a * z[j..j + c.degree].iter().product::<f64>())
                        .sum::<f64>()
            })
            .sum()
    }
}

/// A target with one unit-norm component per window length, `α_j` i.i.d.
/// exponential with mean one.
pub fn make_synthetic_target<R: Rng + ?Sized>(d0: usize, window_lengths: &[usize], rng: &mut R) -> Result<TargetSpec> {
    let mut windows = Vec::with_capacity(window_lengths.len());
    for &m in window_lengths {
        if m < 2 || m > d0 {
            return Err(domain(format!("window length {m} must lie in 2..={d0}")));
        }
        let alpha = (0..d0 - m + 1).map(|_| Exp1.sample(rng)).collect();
        windows.push((m, alpha, 1.0));
    }
    TargetSpec::from_windows(d0, windows)
}

/// `φ` at each row of `latent_points` (rows on `S^{d0-1}(sqrt(d0))`).
pub fn evaluate_target(target: &TargetSpec, latent_points: &DMatrix<f64>) -> Result<Vec<f64>> {
    if latent_points.ncols() != target.d0 {
        return Err(shape(format!(
            "latent points have {} columns, target expects d0 = {}",
            latent_points.ncols(),
            target.d0
        )));
    }
    let mut z = vec![0.0; target.d0];
    Ok((0..latent_points.nrows())
        .map(|i| {
            for (k, v) in z.iter_mut().enumerate() {
                *v = latent_points[(i, k)];
            }
            target.eval_point(&z)
        })
        .collect())
}

/// Samples with covariates `x` (rows) and labels `y`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub params: SphereModelParams,
    pub target: TargetSpec,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// `z0 / r` for row `i`: the latent-sphere point the label depends on.
    pub fn latent_row(&self, i: usize) -> Vec<f64> {
        let r = self.params.r();
        (0..self.params.d0()).map(|k| self.x[(i, k)] / r).collect()
    }

    /// Noiseless target values `φ(z0/r)` at every row.
    pub fn target_values(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.target.eval_point(&self.latent_row(i))).collect()
    }

    /// Same labels with covariates mapped `x ↦ O x`; rotation-equivariant
    /// methods must be unaffected.
    pub fn rotated(&self, rotation: &DMatrix<f64>) -> Result<Dataset> {
        if rotation.nrows() != self.params.d || rotation.ncols() != self.params.d {
            return Err(shape("rotation must be d x d"));
        }
        Ok(Dataset { x: &self.x * rotation.transpose(), ..self.clone() })
    }

    /// Little-endian binary: header `n, d, d0, η, κ, τ, seed` (8 bytes each),
    /// then `X` row-major, then `y`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let p = &self.params;
        for v in [self.n() as u64, p.d as u64, p.d0() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [p.eta, p.kappa, p.noise_tau] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&p.seed.to_le_bytes())?;
        for i in 0..self.n() {
            for j in 0..p.d {
                w.write_all(&self.x[(i, j)].to_le_bytes())?;
            }
        }
        for v in &self.y {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with columns `x0 .. x{d-1}, y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.params.d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..self.params.d).map(|j| self.x[(i, j)].to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Contents of a binary dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub d0: usize,
    pub params: SphereModelParams,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

/// Reads a file written by [`Dataset::write_binary`].
pub fn read_dataset_binary(path: &Path) -> Result<RawDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
        r.read_exact(&mut buf)?;
        Ok(buf)
    };
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let d = u64::from_le_bytes(next(&mut r)?) as usize;
    let d0 = u64::from_le_bytes(next(&mut r)?) as usize;
    let eta = f64::from_le_bytes(next(&mut r)?);
    let kappa = f64::from_le_bytes(next(&mut r)?);
    let noise_tau = f64::from_le_bytes(next(&mut r)?);
    let seed = u64::from_le_bytes(next(&mut r)?);
    let mut xs = vec![0.0; n * d];
    for v in xs.iter_mut() {
        *v = f64::from_le_bytes(next(&mut r)?);
    }
    let mut y = vec![0.0; n];
    for v in y.iter_mut() {
        *v = f64::from_le_bytes(next(&mut r)?);
    }
    Ok(RawDataset {
        d0,
        params: SphereModelParams { d, eta, kappa, noise_tau, seed },
        x: DMatrix::from_row_slice(n, d, &xs),
        y,
    })
}

fn sample_rows(
    params: &SphereModelParams,
    target: &TargetSpec,
    n: usize,
    stream_domain: u64,
    noisy: bool,
) -> Result<Dataset> {
    params.validate()?;
    if n == 0 {
        return Err(domain("need n >= 1"));
    }
    let d0 = params.d0();
    if target.d0 != d0 {
        return Err(shape(format!("target has d0 = {}, model has d0 = {d0}", target.d0)));
    }
    let d = params.d;
    let r = params.r();
    let spheres = params.product_spheres();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = stream(params.seed, stream_domain, i as u64);
            let mut row = vec![0.0; d];
            fill_product_row(&spheres, &mut row, &mut g);
            let z: Vec<f64> = row[..d0].iter().map(|v| v / r).collect();
            let mut y = target.eval_point(&z);
            if noisy && params.noise_tau > 0.0 {
                let mut e = stream(params.seed, rng::domain::NOISE ^ stream_domain, i as u64);
                let eps: f64 = StandardNormal.sample(&mut e);
                y += params.noise_tau * eps;
            }
            (row, y)
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for (row, yi) in rows {
        data.extend_from_slice(&row);
        y.push(yi);
    }
    Ok(Dataset {
        x: DMatrix::from_row_slice(n, d, &data),
        y,
        params: *params,
        target: target.clone(),
    })
}

/// Training sample: row `i` is drawn from its own stream keyed by `params.seed`,
/// labels carry `N(0, τ²)` noise.
pub fn sample_dataset(params: &SphereModelParams, target: &TargetSpec, n: usize) -> Result<Dataset> {
    sample_rows(params, target, n, rng::domain::TRAIN, true)
}

/// Fresh noiseless test sample, independent of the training rows.
pub fn sample_test_set(params: &SphereModelParams, target: &TargetSpec, n: usize) -> Result<Dataset> {
    sample_rows(params, target, n, rng::domain::TEST, false)
}

/// Haar-distributed orthogonal `d × d` matrix.
pub fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
