//! Linear-operator abstraction and packed symmetric storage.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape, Result};

/// A symmetric linear map applied matrix-free. Implementations must be
/// reentrant: `apply` may be called from several threads at once.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// `A_ii`, if cheaply known.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        y.iter_mut().for_each(|v| *v = 0.0);
        // column-major: accumulate columns
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = &self.as_slice()[j * n..(j + 1) * n];
            for (yi, a) in y.iter_mut().zip(col) {
                *yi += a * xj;
            }
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diagonal().iter().copied().collect())
    }
}

/// `A + shift I` for any operator.
pub struct Shifted<'a, A: LinearOperator + ?Sized> {
    pub inner: &'a A,
    pub shift: f64,
}

impl<A: LinearOperator + ?Sized> LinearOperator for Shifted<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.shift * xi;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        self.inner
            .diagonal()
            .map(|d| d.into_iter().map(|v| v + self.shift).collect())
    }
}

/// Operator defined by a closure.
pub struct FnOperator<F: Fn(&[f64], &mut [f64]) + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Symmetric matrix storing only the lower triangle, row by row.
/// Halves the memory of a dense kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSymmetric {
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn tri(i: usize) -> usize {
    i * (i + 1) / 2
}

impl PackedSymmetric {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; tri(n)] }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(shape(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        let mut p = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                p.data[tri(i) + j] = a[(i, j)];
            }
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[tri(i) + j]
    }

    /// Row `i` of the lower triangle, entries `(i, 0..=i)`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[tri(i)..tri(i) + i + 1]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[tri(i)..tri(i) + i + 1]
    }

    /// Mutable lower-triangle rows `start..end` as one contiguous slice.
    pub fn rows_mut(&mut self, start: usize, end: usize) -> &mut [f64] {
        &mut self.data[tri(start)..tri(end)]
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.n {
            self.data[tri(i) + i] += shift;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Solves `(A + shift I) x = b` by dense Cholesky.
    pub fn cholesky_solve(&self, shift: f64, b: &[f64]) -> Option<Vec<f64>> {
        let mut a = self.to_dense();
        for i in 0..self.n {
            a[(i, i)] += shift;
        }
        Some(CholeskyFactor::new(a)?.solve(b))
    }
}

const CHOLESKY_BLOCK: usize = 128;

/// Lower Cholesky factor `A = L Lᵀ`, computed blockwise so the trailing
/// updates run through the blocked gemm.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    /// `None` when `a` is not numerically positive definite. Only the lower
    /// triangle of `a` is read.
    pub fn new(mut a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "square matrix");
        let mut k = 0;
        while k < n {
            let kb = CHOLESKY_BLOCK.min(n - k);
            let l11 = a.view((k, k), (kb, kb)).into_owned().cholesky()?.unpack();
            a.view_mut((k, k), (kb, kb)).copy_from(&l11);
            let m = n - k - kb;
            if m > 0 {
                // L21 = A21 L11⁻ᵀ, then A22 -= L21 L21ᵀ
                let a21t = a.view((k + kb, k), (m, kb)).transpose();
                let l21t = l11.solve_lower_triangular(&a21t)?;
                let l21 = l21t.transpose();
                a.view_mut((k + kb, k), (m, kb)).copy_from(&l21);
                a.view_mut((k + kb, k + kb), (m, m)).gemm(-1.0, &l21, &l21t, 1.0);
            }
            k += kb;
        }
        a.fill_upper_triangle(0.0, 1);
        Some(Self { l: a })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `A⁻¹ b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = DVector::from_column_slice(b);
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x.as_slice().to_vec()
    }
}

impl LinearOperator for PackedSymmetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let row = self.row(i);
            let xi = x[i];
            let mut acc = 0.0;
            let (off, diag) = row.split_at(i);
            for ((a, xj), yj) in off.iter().zip(&x[..i]).zip(&mut y[..i]) {
                acc += a * xj;
                *yj += a * xi;
            }
            y[i] += acc + diag[0] * xi;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.n).map(|i| self.data[tri(i) + i]).collect())
    }
}
