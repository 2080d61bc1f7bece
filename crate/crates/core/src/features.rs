//! Finite-width random-feature (RF) and neural-tangent (NT) design matrices.
//!
//! First-layer arguments are `<w_i, x> sqrt(d) / ρ` with `w_i` uniform on the
//! unit sphere and `ρ` the data radius, so they are asymptotically standard
//! Gaussian and the empirical kernels `ΦΦᵀ/N` (RF) and `ΦΦᵀ/(N ρ²)` (NT)
//! converge to the limiting kernels.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{domain, shape, Error, Result};
use crate::linalg::LinearOperator;
use crate::rng::{self, stream};

/// Default cap on the bytes a single feature matrix may occupy.
pub const DEFAULT_MEMORY_BUDGET: usize = 2_500_000_000;

/// First-layer weights, one unit-norm row per neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightEnsemble {
    pub w: DMatrix<f64>,
    pub seed: u64,
}

impl WeightEnsemble {
    pub fn n_neurons(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }
}

/// `n_neurons` rows uniform on `S^{d-1}(1)`; neuron `i` uses its own stream.
pub fn sample_weights(n_neurons: usize, d: usize, seed: u64) -> Result<WeightEnsemble> {
    if n_neurons < 1 || d < 1 {
        return Err(domain(format!("need N >= 1 and d >= 1, got N = {n_neurons}, d = {d}")));
    }
    let rows: Vec<f64> = (0..n_neurons)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut g = stream(seed, rng::domain::WEIGHTS, i as u64);
            let m = crate::geometry::sample_sphere(d, 1.0, 1, &mut g).expect("valid sphere");
            m.iter().copied().collect::<Vec<_>>()
        })
        .collect();
    Ok(WeightEnsemble { w: DMatrix::from_row_slice(n_neurons, d, &rows), seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Rf,
    Nt,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Rf => "rf",
            FeatureKind::Nt => "nt",
        }
    }
}

/// How feature values are held in memory.
#[derive(Clone, Debug)]
pub enum FeatureStorage {
    Dense(DMatrix<f64>),
    /// Row-major single precision, for wide RF designs.
    Compact(Vec<f32>),
    /// NT features kept as the data `x` (n × d) and the gates
    /// `σ'(<w_i, x_j> s)` (n × N); products are formed on the fly.
    NtFactored { x: DMatrix<f64>, gates: DMatrix<f64> },
}

/// Storage preference and memory cap for feature construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureOptions {
    pub memory_budget_bytes: usize,
    /// Store RF features in single precision.
    pub compact: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { memory_budget_bytes: DEFAULT_MEMORY_BUDGET, compact: false }
    }
}

/// The map `x ↦ features(x)` defined by weights, activation and scaling.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub weights: WeightEnsemble,
    pub activation: Arc<ActivationSpec>,
    /// Multiplier applied to `<w_i, x>`, normally `sqrt(d)/ρ`.
    pub scaling: f64,
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, weights: WeightEnsemble, activation: Arc<ActivationSpec>, radius_sq: f64) -> Result<Self> {
        if !(radius_sq > 0.0) {
            return Err(domain(format!("squared radius must be positive, got {radius_sq}")));
        }
        let scaling = (weights.dim() as f64 / radius_sq).sqrt();
        Ok(Self { kind, weights, activation, scaling })
    }

    /// Number of trainable parameters: `N` (RF) or `N d` (NT).
    pub fn n_features(&self) -> usize {
        match self.kind {
            FeatureKind::Rf => self.weights.n_neurons(),
            FeatureKind::Nt => self.weights.n_neurons() * self.weights.dim(),
        }
    }

    fn preactivations(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.weights.dim() {
            return Err(shape(format!("data has {} columns, weights have {}", x.ncols(), self.weights.dim())));
        }
        Ok(x * self.weights.w.transpose() * self.scaling)
    }

    /// Feature matrix of `x` under `opts`. NT designs that would exceed the
    /// budget when dense are returned in factored form instead.
    pub fn features(&self, x: &DMatrix<f64>, opts: FeatureOptions) -> Result<FeatureMatrix> {
        let n = x.nrows();
        let p = self.n_features();
        let storage = match self.kind {
            FeatureKind::Rf => {
                let bytes_per = if opts.compact { 4 } else { 8 };
                check_budget(n * p * bytes_per, opts.memory_budget_bytes)?;
                // preactivations are as large as Φ itself, so build in row blocks
                let block = row_block(p);
                if opts.compact {
                    let mut data = vec![0f32; n * p];
                    for (b, rows) in data.chunks_mut(block * p).enumerate() {
                        let len = rows.len() / p;
                        let z = self.preactivations(&x.rows(b * block, len).into_owned())?;
                        rows.par_chunks_mut(p).enumerate().for_each(|(j, row)| {
                            for (i, v) in row.iter_mut().enumerate() {
                                *v = self.activation.eval(z[(j, i)]) as f32;
                            }
                        });
                    }
                    FeatureStorage::Compact(data)
                } else {
                    let mut m = DMatrix::zeros(n, p);
                    let mut start = 0;
                    while start < n {
                        let len = block.min(n - start);
                        let z = self.preactivations(&x.rows(start, len).into_owned())?;
                        m.rows_mut(start, len).copy_from(&z.map(|v| self.activation.eval(v)));
                        start += len;
                    }
                    FeatureStorage::Dense(m)
                }
            }
            FeatureKind::Nt => {
                let gates = self.preactivations(x)?.map(|v| self.activation.derivative(v));
                if n * p * 8 <= opts.memory_budget_bytes {
                    FeatureStorage::Dense(nt_dense(x, &gates))
                } else {
                    check_budget(n * (x.ncols() + gates.ncols()) * 8, opts.memory_budget_bytes)?;
                    FeatureStorage::NtFactored { x: x.clone(), gates }
                }
            }
        };
        Ok(FeatureMatrix { kind: self.kind, storage, n, p, scaling: self.scaling })
    }

    /// `Φ(x) · coefficients` in row blocks, never holding all test features.
    /// `coefficients` is `p × m`.
    pub fn predict(&self, x: &DMatrix<f64>, coefficients: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coefficients.nrows() != self.n_features() {
            return Err(shape(format!(
                "{} coefficient rows for {} features",
                coefficients.nrows(),
                self.n_features()
            )));
        }
        let n = x.nrows();
        let m = coefficients.ncols();
        let block = (1usize << 22) / self.n_features().max(1);
        let block = block.clamp(1, 1024);
        let mut out = DMatrix::zeros(n, m);
        let mut start = 0;
        while start < n {
            let end = (start + block).min(n);
            let xb = x.rows(start, end - start).into_owned();
            let z = self.preactivations(&xb)?;
            let part = match self.kind {
                FeatureKind::Rf => z.map(|v| self.activation.eval(v)) * coefficients,
                FeatureKind::Nt => {
                    let gates = z.map(|v| self.activation.derivative(v));
                    let d = x.ncols();
                    let mut res = DMatrix::zeros(end - start, m);
                    for c in 0..m {
                        // column c as an N × d matrix A; Φa = rowsum((X Aᵀ) ∘ S)
                        let a = DMatrix::from_row_slice(self.weights.n_neurons(), d, coefficients.column(c).as_slice());
                        let xa = &xb * a.transpose();
                        for j in 0..end - start {
                            res[(j, c)] = xa.row(j).dot(&gates.row(j));
                        }
                    }
                    res
                }
            };
            out.rows_mut(start, end - start).copy_from(&part);
            start = end;
        }
        Ok(out)
    }
}

/// `Σ f_i a_i` with eight running sums so the loop vectorizes; the order is
/// fixed, so results are reproducible.
fn dot_mixed(f: &[f32], a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (fc, ac) = (f.chunks_exact(8), a.chunks_exact(8));
    let tail: f64 = fc.remainder().iter().zip(ac.remainder()).fold(0.0, |t, (x, y)| t + *x as f64 * y);
    for (fs, as_) in fc.zip(ac) {
        for k in 0..8 {
            acc[k] += fs[k] as f64 * as_[k];
        }
    }
    acc.iter().fold(tail, |t, v| t + v)
}

fn check_budget(needed: usize, budget: usize) -> Result<()> {
    if needed > budget {
        Err(Error::Memory { needed, budget })
    } else {
        Ok(())
    }
}

// tiny under test so the unit tests cross block boundaries
const BLOCK_BYTES: usize = if cfg!(test) { 2048 } else { 64 << 20 };

/// Rows per block so a block of `p` f64 columns stays near `BLOCK_BYTES`.
fn row_block(p: usize) -> usize {
    (BLOCK_BYTES / 8 / p.max(1)).max(1)
}

fn nt_dense(x: &DMatrix<f64>, gates: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let nn = gates.ncols();
    DMatrix::from_fn(n, nn * d, |j, c| gates[(j, c / d)] * x[(j, c % d)])
}

/// A design matrix `Φ` (n × p).
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub storage: FeatureStorage,
    n: usize,
    p: usize,
    /// Argument multiplier used when the features were built.
    pub scaling: f64,
}

impl FeatureMatrix {
    /// Wraps an explicit design matrix.
    pub fn from_dense(kind: FeatureKind, m: DMatrix<f64>) -> Self {
        let (n, p) = m.shape();
        Self { kind, storage: FeatureStorage::Dense(m), n, p, scaling: 1.0 }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    /// `Φ a`
    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        assert_eq!(a.len(), self.p);
        match &self.storage {
            FeatureStorage::Dense(m) => (m * nalgebra::DVector::from_column_slice(a)).as_slice().to_vec(),
            FeatureStorage::Compact(data) => data.par_chunks(self.p).map(|row| dot_mixed(row, a)).collect(),
            FeatureStorage::NtFactored { x, gates } => {
                let d = x.ncols();
                let am = DMatrix::from_row_slice(gates.ncols(), d, a);
                let xa = x * am.transpose();
                // rowsum(XAᵀ ∘ S), walked column by column to stay contiguous
                let mut out = vec![0.0; self.n];
                for (g, v) in gates.column_iter().zip(xa.column_iter()) {
                    for ((o, gi), vi) in out.iter_mut().zip(g.iter()).zip(v.iter()) {
                        *o += gi * vi;
                    }
                }
                out
            }
        }
    }

    /// `Φᵀ r`
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n);
        match &self.storage {
            FeatureStorage::Dense(m) => m.tr_mul(&nalgebra::DVector::from_column_slice(r)).as_slice().to_vec(),
            FeatureStorage::Compact(data) => {
                let chunk = 512;
                data.par_chunks(self.p * chunk)
                    .enumerate()
                    .map(|(b, rows)| {
                        let mut acc = vec![0.0f64; self.p];
                        for (k, row) in rows.chunks(self.p).enumerate() {
                            let rj = r[b * chunk + k];
                            if rj != 0.0 {
                                for (a, f) in acc.iter_mut().zip(row) {
                                    *a += rj * *f as f64;
                                }
                            }
                        }
                        acc
                    })
                    // collect then sum in chunk order so results do not depend on scheduling
                    .collect::<Vec<_>>()
                    .into_iter()
                    .fold(vec![0.0; self.p], |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        a
                    })
            }
            FeatureStorage::NtFactored { x, gates } => {
                // block i = Σ_j r_j σ'_ji x_j. Column i of (diag(r) X)ᵀ S is block i,
                // so the column-major buffer is already in feature order.
                let mut xr = x.clone();
                for mut col in xr.column_iter_mut() {
                    col.component_mul_assign(&nalgebra::DVectorView::from_slice(r, self.n));
                }
                (xr.transpose() * gates).as_slice().to_vec()
            }
        }
    }

    /// `Φᵀ Φ a`. Compact storage does it in one pass: each row is still in
    /// cache for the second product, which halves the memory traffic.
    pub fn apply_normal(&self, a: &[f64]) -> Vec<f64> {
        let FeatureStorage::Compact(data) = &self.storage else {
            return self.apply_transpose(&self.apply(a));
        };
        assert_eq!(a.len(), self.p);
        data.par_chunks(self.p * 512)
            .map(|rows| {
                let mut acc = vec![0.0f64; self.p];
                for row in rows.chunks(self.p) {
                    let v = dot_mixed(row, a);
                    for (s, f) in acc.iter_mut().zip(row) {
                        *s += v * *f as f64;
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(vec![0.0; self.p], |mut s, b| {
                s.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                s
            })
    }

    /// `Φ` as a dense `f64` matrix, if it fits in `budget_bytes`.
    pub fn to_dense(&self, budget_bytes: usize) -> Result<DMatrix<f64>> {
        check_budget(self.n * self.p * 8, budget_bytes)?;
        Ok(match &self.storage {
            FeatureStorage::Dense(m) => m.clone(),
            FeatureStorage::Compact(data) => DMatrix::from_fn(self.n, self.p, |j, i| data[j * self.p + i] as f64),
            FeatureStorage::NtFactored { x, gates } => nt_dense(x, gates),
        })
    }

    /// `Φ Φᵀ` (n × n).
    pub fn gram(&self, budget_bytes: usize) -> Result<DMatrix<f64>> {
        check_budget(self.n * self.n * 8, budget_bytes)?;
        Ok(match &self.storage {
            FeatureStorage::Dense(m) => m * m.transpose(),
            FeatureStorage::NtFactored { x, gates } => {
                // (Φ Φᵀ)_jk = <x_j, x_k> <s_j, s_k>
                let xx = x * x.transpose();
                let ss = gates * gates.transpose();
                xx.component_mul(&ss)
            }
            FeatureStorage::Compact(_) => {
                let block = row_block(self.p);
                let mut g = DMatrix::zeros(self.n, self.n);
                for a in (0..self.n).step_by(block) {
                    let ba = self.dense_rows(a, block.min(self.n - a));
                    for b in (0..=a).step_by(block) {
                        let bb = self.dense_rows(b, block.min(self.n - b));
                        let part = &ba * bb.transpose();
                        g.view_mut((a, b), part.shape()).copy_from(&part);
                        g.view_mut((b, a), (part.ncols(), part.nrows())).copy_from(&part.transpose());
                    }
                }
                g
            }
        })
    }

    /// Rows `start..start + len` of `Φ` as dense f64.
    fn dense_rows(&self, start: usize, len: usize) -> DMatrix<f64> {
        match &self.storage {
            FeatureStorage::Dense(m) => m.rows(start, len).into_owned(),
            FeatureStorage::Compact(data) => {
                DMatrix::from_fn(len, self.p, |j, i| data[(start + j) * self.p + i] as f64)
            }
            FeatureStorage::NtFactored { x, gates } => {
                nt_dense(&x.rows(start, len).into_owned(), &gates.rows(start, len).into_owned())
            }
        }
    }

    /// `Φᵀ Φ` (p × p).
    pub fn normal_matrix(&self, budget_bytes: usize) -> Result<DMatrix<f64>> {
        check_budget(self.p * self.p * 8, budget_bytes)?;
        // accumulate block by block, in row order; `transpose() * b` goes through
        // the blocked gemm while `tr_mul` does not
        let block = row_block(self.p);
        let mut a = DMatrix::zeros(self.p, self.p);
        for start in (0..self.n).step_by(block) {
            let b = self.dense_rows(start, block.min(self.n - start));
            a += b.transpose() * &b;
        }
        Ok(a)
    }
}

/// `v ↦ Φᵀ Φ v` without forming `ΦᵀΦ`.
pub struct NormalOperator<'a>(pub &'a FeatureMatrix);

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.0.n_features()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.0.apply_normal(x));
    }
}

/// `v ↦ Φ Φᵀ v` without forming `ΦΦᵀ`.
pub struct GramOperator<'a>(pub &'a FeatureMatrix);

impl LinearOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        self.0.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let t = self.0.apply(&self.0.apply_transpose(x));
        y.copy_from_slice(&t);
    }
}

/// Random features `Φ_ji = σ(<w_i, x_j> sqrt(d)/ρ)`, dense double precision.
pub fn rf_features(
    weights: &WeightEnsemble,
    x: &DMatrix<f64>,
    activation: &Arc<ActivationSpec>,
    radius_sq: f64,
) -> Result<FeatureMatrix> {
    FeatureMap::new(FeatureKind::Rf, weights.clone(), activation.clone(), radius_sq)?
        .features(x, FeatureOptions::default())
}

/// Neural-tangent features: block `i` of row `j` is `x_j σ'(<w_i, x_j> sqrt(d)/ρ)`.
pub fn nt_features(
    weights: &WeightEnsemble,
    x: &DMatrix<f64>,
    activation: &Arc<ActivationSpec>,
    radius_sq: f64,
) -> Result<FeatureMatrix> {
    FeatureMap::new(FeatureKind::Nt, weights.clone(), activation.clone(), radius_sq)?
        .features(x, FeatureOptions::default())
}
