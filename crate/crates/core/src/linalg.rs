//! Dense real matrix kernel.
//!
//! Everything in the optimizer stack (parameters, gradients, moments,
//! worker deltas, pseudogradients) is carried as a row-major [`Matrix`] of
//! `f64`. The module also hosts the two numerical routines the rest of the
//! crate leans on: a one-sided Jacobi SVD used as the spectral oracle, and
//! the quintic Newton–Schulz iteration that orthogonalizes Muon's momentum.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Newton–Schulz quintic coefficients `(a, b, c)` of `p(x) = ax + bx^3 + cx^5`.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Default number of Newton–Schulz iterations used by Muon.
pub const NS_DEFAULT_ITERATIONS: usize = 5;

/// Off-diagonal tolerance of the Jacobi sweeps (cosine between column pairs).
pub const JACOBI_TOL: f64 = 1e-12;

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("direction of a zero matrix is undefined")]
    UndefinedDirection,
    #[error("jacobi svd did not converge within {sweeps} sweeps")]
    IterationLimit { sweeps: usize },
    #[error("newton-schulz produced a non-finite value at iteration {iteration}")]
    NumericalOverflow { iteration: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.data[r * self.cols + c])?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or empty input;
    /// intended for literals in tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self::new(r, c, data).expect("invalid literal matrix")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |r, c| if r == c { values[r] } else { 0.0 })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; matrices have positive dimensions.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `min(rows, cols)`.
    #[inline]
    pub fn rank_bound(&self) -> usize {
        self.rows.min(self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bitwise_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * p..(k + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: p,
            data: out,
        })
    }

    /// `self * self^T`, exploiting symmetry.
    pub fn gram_rows(&self) -> Matrix {
        let (n, m) = (self.rows, self.cols);
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let ri = self.row(i);
            for j in i..n {
                let v = dot(ri, self.row(j));
                out.data[i * n + j] = v;
                out.data[j * n + i] = v;
            }
        }
        let _ = m;
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Entries of column `c` as a vector.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    dot(&a.data, &a.data).sqrt()
}

/// `<A, B>_F = Tr(A^T B)`.
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(dot(&a.data, &b.data))
}

pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.sigma.iter().sum())
}

/// Cosine similarity of the vectorized matrices, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &Matrix, b: &Matrix) -> Result<f64> {
    let inner = frobenius_inner(a, b)?;
    let na = frobenius_norm(a);
    let nb = frobenius_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(LinalgError::UndefinedDirection);
    }
    Ok((inner / (na * nb)).clamp(-1.0, 1.0))
}

/// Thin singular value decomposition `A = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, length `r = min(m, n)`.
    pub sigma: Vec<f64>,
    /// `n x r`, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |r, c| {
            self.u.get(r, c) * self.sigma[c]
        });
        us.matmul(&self.v.transpose())
            .expect("svd factors have consistent shapes")
    }

    /// The orthonormal factor `U V^T`.
    pub fn orthonormal_factor(&self) -> Matrix {
        self.u
            .matmul(&self.v.transpose())
            .expect("svd factors have consistent shapes")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Columns of the working copy are rotated pairwise until every pair is
/// orthogonal to within [`JACOBI_TOL`]; the column norms are then the
/// singular values. Wide inputs are handled through the transpose. Columns
/// of `U` belonging to (numerically) zero singular values are completed to
/// an orthonormal set so `U` and `V` always have `r` orthonormal columns.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.rows < a.cols {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    let (m, n) = a.shape();
    // Column-major working copies: w[j] is column j of A V, v[j] column j of V.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::IterationLimit { sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }

    let mut sigma: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let cutoff = smax * (m.max(n) as f64) * f64::EPSILON;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &deficient);

    let sorted_sigma: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    sigma = sorted_sigma;
    let u = Matrix::from_fn(m, n, |r, c| u_cols[c][r]);
    let vm = Matrix::from_fn(n, n, |r, c| v[order[c]][r]);
    Ok(Svd { u, sigma, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `missing` slots of `cols` with unit vectors orthogonal to all
/// other columns (modified Gram–Schmidt against the standard basis).
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut candidate = 0usize;
    for &slot in missing {
        loop {
            assert!(candidate < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, col) in cols.iter().enumerate() {
                    if j == slot || col.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let proj = dot(&e, col);
                    for (ei, ci) in e.iter_mut().zip(col) {
                        *ei -= proj * ci;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                cols[slot] = e.iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

/// Quintic Newton–Schulz orthogonalization.
///
/// `X_0 = m / ||m||_F`, then `X <- aX + b(XX^T)X + c(XX^T)^2 X` for the
/// given number of iterations. Tall inputs are iterated on their transpose
/// so the Gram matrix is the smaller one. A zero input yields a zero output.
pub fn newton_schulz(m: &Matrix, iterations: usize) -> Result<Matrix> {
    let norm = frobenius_norm(m);
    if norm == 0.0 {
        return Ok(m.zeros_like());
    }
    if !norm.is_finite() {
        return Err(LinalgError::NumericalOverflow { iteration: 0 });
    }
    let tall = m.rows > m.cols;
    let mut x = if tall { m.transpose() } else { m.clone() };
    x = x.scale(1.0 / norm);
    let (a, b, c) = NS_COEFFS;
    for iteration in 1..=iterations {
        let gram = x.gram_rows();
        let gram2 = gram.matmul(&gram)?;
        let poly = gram.zip_map(&gram2, |g, g2| b * g + c * g2)?;
        let mut next = poly.matmul(&x)?;
        for (n, &xi) in next.data.iter_mut().zip(&x.data) {
            *n += a * xi;
        }
        if !next.is_finite() {
            return Err(LinalgError::NumericalOverflow { iteration });
        }
        x = next;
    }
    Ok(if tall { x.transpose() } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn max_orthonormality_error(q: &Matrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        let id = Matrix::identity(g.rows());
        g.sub(&id).unwrap().max_abs()
    }

    /// Eigenvalues of a symmetric matrix by bisection on Sturm counts of the
    /// characteristic polynomial (via LDL^T pivots). Independent of Jacobi.
    fn symmetric_eigenvalues_bisection(s: &Matrix) -> Vec<f64> {
        let n = s.rows();
        let bound = (0..n)
            .map(|i| (0..n).map(|j| s.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        // Number of eigenvalues < x from the inertia of S - xI.
        let count_below = |x: f64| -> usize {
            let mut a = Matrix::from_fn(n, n, |i, j| s.get(i, j) - if i == j { x } else { 0.0 });
            let mut negatives = 0;
            for k in 0..n {
                let mut pivot = a.get(k, k);
                if pivot == 0.0 {
                    pivot = -1e-300;
                }
                if pivot < 0.0 {
                    negatives += 1;
                }
                for i in k + 1..n {
                    let f = a.get(i, k) / pivot;
                    for j in k + 1..n {
                        let v = a.get(i, j) - f * a.get(k, j);
                        a.set(i, j, v);
                    }
                }
            }
            negatives
        };
        let mut eigs = Vec::new();
        for idx in 0..n {
            let (mut lo, mut hi) = (-bound - 1.0, bound + 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(mid) > idx {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            eigs.push(0.5 * (lo + hi));
        }
        eigs
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            Matrix::new(0, 2, vec![]),
            Err(LinalgError::EmptyShape { .. })
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(LinalgError::DataLength { .. })
        ));
        assert_eq!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        let s = svd(&Matrix::diag(&[3.0, 0.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 0.0]);
        assert!(max_orthonormality_error(&s.u) < 1e-12);
        assert!(max_orthonormality_error(&s.v) < 1e-12);
    }

    #[test]
    fn svd_random_matches_bisection_oracle() {
        let a = gaussian(5, 4, 11);
        let s = svd(&a).unwrap();
        let rec = s.reconstruct();
        assert!(frobenius_norm(&rec.sub(&a).unwrap()) < 1e-9 * frobenius_norm(&a));
        let ata = a.transpose().matmul(&a).unwrap();
        let mut eigs = symmetric_eigenvalues_bisection(&ata);
        eigs.sort_by(|x, y| y.total_cmp(x));
        for (sv, ev) in s.sigma.iter().zip(&eigs) {
            assert!((sv - ev.max(0.0).sqrt()).abs() < 1e-9, "{sv} vs {}", ev.sqrt());
        }
    }

    #[test]
    fn svd_reconstruction_and_orthonormality_up_to_64() {
        for (i, &(m, n)) in [(1, 1), (1, 7), (7, 1), (8, 3), (3, 8), (17, 17), (64, 40), (40, 64), (64, 64)]
            .iter()
            .enumerate()
        {
            let a = gaussian(m, n, 100 + i as u64);
            let s = svd(&a).unwrap();
            let err = frobenius_norm(&s.reconstruct().sub(&a).unwrap());
            assert!(err <= 1e-9 * frobenius_norm(&a), "{m}x{n}: {err}");
            assert!(max_orthonormality_error(&s.u) < 1e-9);
            assert!(max_orthonormality_error(&s.v) < 1e-9);
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(s.sigma.len(), m.min(n));
        }
    }

    #[test]
    fn svd_rank_deficient_has_complete_factors() {
        let x = gaussian(6, 1, 3);
        let y = gaussian(1, 4, 4);
        let a = x.matmul(&y).unwrap();
        let s = svd(&a).unwrap();
        assert!(s.sigma[1] < 1e-12 * s.sigma[0]);
        assert!(max_orthonormality_error(&s.u) < 1e-9);
        let factor = s.orthonormal_factor();
        assert!((frobenius_norm(&factor) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn orthonormal_factor_inner_product_is_nuclear_norm() {
        for seed in 0..20 {
            let a = gaussian(3 + seed as usize % 5, 2 + seed as usize % 7, seed);
            let s = svd(&a).unwrap();
            let lhs = frobenius_inner(&a, &s.orthonormal_factor()).unwrap();
            let nuc: f64 = s.sigma.iter().sum();
            assert!((lhs - nuc).abs() <= 1e-9 * nuc);
            let r = a.rank_bound() as f64;
            assert!((frobenius_norm(&s.orthonormal_factor()) - r.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn norms_and_cosine() {
        let a = gaussian(3, 4, 9);
        assert!((cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((nuclear_norm(&Matrix::diag(&[2.0, 1.0])).unwrap() - 3.0).abs() < 1e-15);
        let swap = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(frobenius_inner(&Matrix::identity(2), &swap).unwrap(), 0.0);
        assert_eq!(
            cosine_sim(&a, &a.zeros_like()),
            Err(LinalgError::UndefinedDirection)
        );
        assert!(matches!(
            frobenius_inner(&a, &Matrix::zeros(4, 3)),
            Err(LinalgError::ShapeMismatch { .. })
        ));
    }

    /// Scalar image of a singular value under the normalized iteration.
    fn ns_scalar(mut s: f64, iterations: usize) -> f64 {
        let (a, b, c) = NS_COEFFS;
        for _ in 0..iterations {
            s = a * s + b * s.powi(3) + c * s.powi(5);
        }
        s
    }

    #[test]
    fn ns_scalar_band_scan() {
        // Brute-force scan of p^5 over (0, 1] for inputs at least 0.05.
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for i in 0..=100_000 {
            let s = 0.05 + 0.95 * i as f64 / 100_000.0;
            let y = ns_scalar(s, 5);
            lo = lo.min(y);
            hi = hi.max(y);
        }
        assert!(lo >= 0.2 && hi <= 1.3, "band [{lo}, {hi}]");
        let y = ns_scalar(0.5, 5);
        assert!((0.68..=1.16).contains(&y));
    }

    #[test]
    fn ns_on_scaled_orthogonal() {
        let q = svd(&gaussian(4, 4, 5)).unwrap().u;
        for c in [1e-3, 0.7, 5.0, 1e4] {
            let o = newton_schulz(&q.scale(c), 5).unwrap();
            let s = svd(&o).unwrap();
            for sv in &s.sigma {
                assert!((0.68..=1.16).contains(sv), "{sv}");
            }
            // Relative to ||Q||_F = 2: every sigma lands at p^5(0.5) ~ 0.765.
            assert!(frobenius_norm(&o.sub(&q).unwrap()) / frobenius_norm(&q) <= 0.35);
        }
    }

    #[test]
    fn ns_zero_and_wide_random() {
        let z = Matrix::zeros(3, 5);
        assert!(newton_schulz(&z, 5).unwrap().bitwise_eq(&z));

        let m = gaussian(8, 16, 21);
        let x0 = m.scale(1.0 / frobenius_norm(&m));
        let s0 = svd(&x0).unwrap();
        let o = newton_schulz(&m, 5).unwrap();
        assert_eq!(o.shape(), (8, 16));
        let so = svd(&o).unwrap();
        // Singular vectors are preserved, so the output spectrum is the
        // scalar image of the input spectrum (re-sorted: p^5 is not monotone).
        let mut mapped: Vec<f64> = s0.sigma.iter().map(|&s| ns_scalar(s, 5)).collect();
        mapped.sort_by(|a, b| b.total_cmp(a));
        for (want, got) in mapped.iter().zip(&so.sigma) {
            assert!((want - got).abs() < 1e-9, "{want} vs {got}");
        }
        for &input in &s0.sigma {
            if input >= 0.05 {
                let out = ns_scalar(input, 5);
                assert!((0.2..=1.3).contains(&out), "{input} -> {out}");
            }
        }
        let g = o.matmul(&o.transpose()).unwrap();
        let gs = svd(&g).unwrap();
        assert!(gs.sigma.iter().all(|&e| (0.04..=1.69).contains(&e)));
    }

    #[test]
    fn ns_tall_matches_transposed_wide() {
        let m = gaussian(12, 5, 8);
        let tall = newton_schulz(&m, 5).unwrap();
        let wide = newton_schulz(&m.transpose(), 5).unwrap();
        assert!(tall.sub(&wide.transpose()).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn ns_reapplication_stays_in_band() {
        // Once every singular value sits in [0.68, 1.16], re-orthogonalizing
        // the output keeps them there.
        for seed in 0..10 {
            let q = svd(&gaussian(6, 10, 31 + seed)).unwrap();
            let spread: Vec<f64> = (0..6).map(|i| 1.0 + 0.1 * i as f64).collect();
            let m = Matrix::from_fn(6, 6, |r, c| q.u.get(r, c) * spread[c])
                .matmul(&q.v.transpose())
                .unwrap();
            let mut o = newton_schulz(&m, 5).unwrap();
            for _ in 0..3 {
                let s = svd(&o).unwrap();
                assert!(s.sigma.iter().all(|v| (0.68..=1.16).contains(v)), "{:?}", s.sigma);
                o = newton_schulz(&o, 5).unwrap();
            }
        }
    }
}
