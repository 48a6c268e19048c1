//! Dense and sparse kernels used by the solvers.
//!
//! Everything here is sized for the *sketched* problem: the symmetric
//! eigensolver is an O(s^3) tridiagonal QL routine and is only ever applied
//! to s-by-s systems (or to the full Hessian in the Newton baseline and the
//! diagnostics, where d is small by construction).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default relative threshold below which eigenvalues are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Default power-iteration budget for [`sigma_max_sq`].
pub const DEFAULT_POWER_ITERS: usize = 1000;

/// QL iterations allowed per eigenvalue before giving up.
const QL_ITERS_PER_EIGENVALUE: usize = 60;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn ensure_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            found: v.len(),
        })
    }
}

/// Symmetric matrix with packed lower-triangular storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            packed: vec![0.0; order * (order + 1) / 2],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds the matrix from `f(i, j)` evaluated on the lower triangle only.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut packed = Vec::with_capacity(order * (order + 1) / 2);
        for i in 0..order {
            for j in 0..=i {
                packed.push(f(i, j));
            }
        }
        Self { order, packed }
    }

    /// Takes the lower triangle of a row-major square matrix.
    pub fn from_row_major(order: usize, data: &[f64]) -> Result<Self> {
        if data.len() != order * order {
            return Err(Error::DimensionMismatch {
                expected: order * order,
                found: data.len(),
            });
        }
        Ok(Self::from_fn(order, |i, j| data[i * order + j]))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.packed[packed_index(i, j)] = value;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        self.packed[packed_index(i, j)] += value;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.packed.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.is_finite())
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.order;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..=i {
                let a = self.get(i, j);
                out[i] += a * v[j];
                if i != j {
                    out[j] += a * v[i];
                }
            }
        }
        out
    }

    /// `v^T M v`
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.order {
            for j in 0..=i {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }
}

/// Column-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumnMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseColumnMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != cols + 1 || col_ptr[0] != 0 {
            return Err(Error::InvalidMatrix(format!(
                "column pointer array must have {} entries starting at 0",
                cols + 1
            )));
        }
        if row_idx.len() != values.len() || *col_ptr.last().unwrap() != row_idx.len() {
            return Err(Error::InvalidMatrix(
                "index and value arrays disagree with the column pointers".into(),
            ));
        }
        for j in 0..cols {
            let (lo, hi) = (col_ptr[j], col_ptr[j + 1]);
            if lo > hi {
                return Err(Error::InvalidMatrix(format!("column {j} has negative length")));
            }
            let idx = &row_idx[lo..hi];
            if idx.iter().any(|&i| i >= rows) {
                return Err(Error::InvalidMatrix(format!("column {j} has a row index out of range")));
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMatrix(format!(
                    "row indices in column {j} are not strictly increasing"
                )));
            }
        }
        ensure_finite(&values, "sparse matrix values")?;
        Ok(Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Builds a matrix from per-column `(row, value)` lists.
    pub fn from_columns(rows: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in columns {
            for &(i, v) in col {
                row_idx.push(i);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self::new(rows, columns.len(), col_ptr, row_idx, values)
    }

    /// Drops exact zeros from a row-major dense matrix.
    pub fn from_dense_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        ensure_len(data, rows * cols)?;
        let columns: Vec<Vec<(usize, f64)>> = (0..cols)
            .map(|j| {
                (0..rows)
                    .filter_map(|i| {
                        let v = data[i * cols + j];
                        (v != 0.0).then_some((i, v))
                    })
                    .collect()
            })
            .collect();
        Self::from_columns(rows, &columns)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn has_nonzero(&self) -> bool {
        self.values.iter().any(|&v| v != 0.0)
    }

    /// `A x` for `x` of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let (idx, val) = self.column(j);
            for (&i, &v) in idx.iter().zip(val) {
                out[i] += v * xj;
            }
        }
        out
    }

    /// `A^T v` for `v` of length `rows`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| {
                let (idx, val) = self.column(j);
                idx.iter().zip(val).map(|(&i, &a)| a * v[i]).sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.rows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.rows {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Walking columns in order keeps the new row indices sorted.
        for j in 0..self.cols {
            let (idx, val) = self.column(j);
            for (&i, &v) in idx.iter().zip(val) {
                let slot = next[i];
                row_idx[slot] = j;
                values[slot] = v;
                next[i] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for j in 0..self.cols {
            let (idx, val) = self.column(j);
            for (&i, &v) in idx.iter().zip(val) {
                out[i * self.cols + j] = v;
            }
        }
        out
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Row-major `order x order`; column `i` is the eigenvector of `eigenvalues[i]`.
    pub eigenvectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        let n = self.order();
        (0..n).map(|r| self.eigenvectors[r * n + i]).collect()
    }

    pub fn largest(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Rebuilds `Q f(Λ) Q^T` for a spectral function `f`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.order();
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.eigenvectors[i * n + k] * mapped[k] * self.eigenvectors[j * n + k])
                .sum()
        })
    }
}

/// Symmetric eigendecomposition via Householder tridiagonalisation followed by
/// implicit QL iterations.
pub fn eigh(m: &SymMatrix) -> Result<EigenDecomposition> {
    let n = m.order();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("symmetric matrix"));
    }
    let mut v = m.to_row_major();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    tridiagonal_ql(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let eigenvalues = order.iter().map(|&k| d[k]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[r * n + dst] = v[r * n + src];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tridiagonal_ql(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let at = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_ITERS_PER_EIGENVALUE {
                    return Err(Error::NoConvergence(QL_ITERS_PER_EIGENVALUE));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Cutoff below which eigenvalues count as zero, and the floor below which a
/// negative eigenvalue is reported as a PSD violation.
fn spectrum_thresholds(eig: &EigenDecomposition, rank_tol: f64) -> (f64, f64) {
    let n = eig.order() as f64;
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.abs()));
    let cutoff = rank_tol * scale.max(0.0);
    let floor = -(rank_tol.max(64.0 * n * f64::EPSILON)) * scale;
    (cutoff, floor)
}

pub(crate) fn check_psd(eig: &EigenDecomposition, rank_tol: f64) -> Result<f64> {
    let (cutoff, floor) = spectrum_thresholds(eig, rank_tol);
    let smallest = eig.eigenvalues[0];
    if smallest < floor {
        return Err(Error::NotPsd {
            eigenvalue: smallest,
            largest: eig.largest(),
        });
    }
    Ok(cutoff)
}

/// Least-norm solution `M^+ b` of a PSD system, discarding eigenvalues at or
/// below `rank_tol * lambda_max`.
pub fn pseudo_solve(m: &SymMatrix, b: &[f64], rank_tol: f64) -> Result<Vec<f64>> {
    ensure_len(b, m.order())?;
    ensure_finite(b, "right-hand side")?;
    let eig = eigh(m)?;
    pseudo_solve_with(&eig, b, rank_tol)
}

/// [`pseudo_solve`] against a precomputed decomposition.
pub fn pseudo_solve_with(eig: &EigenDecomposition, b: &[f64], rank_tol: f64) -> Result<Vec<f64>> {
    let n = eig.order();
    ensure_len(b, n)?;
    let cutoff = check_psd(eig, rank_tol)?;
    let mut x = vec![0.0; n];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff || lambda <= 0.0 {
            continue;
        }
        let coef: f64 = (0..n).map(|r| eig.eigenvectors[r * n + k] * b[r]).sum::<f64>() / lambda;
        for (r, xr) in x.iter_mut().enumerate() {
            *xr += coef * eig.eigenvectors[r * n + k];
        }
    }
    Ok(x)
}

/// Number of eigenvalues above `rank_tol * lambda_max`.
pub fn numerical_rank(m: &SymMatrix, rank_tol: f64) -> Result<usize> {
    let eig = eigh(m)?;
    let (cutoff, _) = spectrum_thresholds(&eig, rank_tol);
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > cutoff && l > 0.0)
        .count())
}

/// Smallest eigenvalue exceeding `rank_tol * lambda_max`; zero for the zero matrix.
pub fn lambda_min_plus(m: &SymMatrix, rank_tol: f64) -> Result<f64> {
    let eig = eigh(m)?;
    let cutoff = check_psd(&eig, rank_tol)?;
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .find(|&l| l > cutoff && l > 0.0)
        .unwrap_or(0.0))
}

/// Power-iteration estimate of the squared largest singular value of `a`.
///
/// Iterates `v <- A (A^T v)` without forming `A A^T`, starting from a
/// Gaussian vector drawn from `seed`. Stops early once the Rayleigh quotient
/// has stopped moving at the level of rounding.
pub fn sigma_max_sq(a: &SparseColumnMatrix, iters: usize, seed: u64) -> Result<f64> {
    if !a.has_nonzero() {
        return Err(Error::ZeroMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..a.rows()).map(|_| rng.sample(StandardNormal)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let w = a.tr_mul_vec(&v);
        let rayleigh = dot(&w, &w);
        let mut next = a.mul_vec(&w);
        let nn = norm(&next);
        if nn == 0.0 {
            // Start vector fell in the left null space; retry from a fresh draw.
            v = (0..a.rows()).map(|_| rng.sample(StandardNormal)).collect();
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            continue;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
        let converged = (rayleigh - estimate).abs() <= 1e-15 * rayleigh;
        estimate = rayleigh;
        if converged {
            break;
        }
    }
    // One last Rayleigh quotient at the final vector.
    let w = a.tr_mul_vec(&v);
    Ok(dot(&w, &w).max(estimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reconstruct(eig: &EigenDecomposition) -> SymMatrix {
        eig.spectral_map(|l| l)
    }

    #[test]
    fn eigh_diagonal() {
        let m = SymMatrix::from_diagonal(&[2.0, 3.0]);
        let eig = eigh(&m).unwrap();
        assert_eq!(eig.eigenvalues, vec![2.0, 3.0]);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(eig.eigenvectors[i * 2 + j].abs(), expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn eigh_zero_matrix() {
        let eig = eigh(&SymMatrix::zeros(2)).unwrap();
        assert_eq!(eig.eigenvalues, vec![0.0, 0.0]);
    }

    #[test]
    fn eigh_one_by_one() {
        let mut m = SymMatrix::zeros(1);
        m.set(0, 0, -4.5);
        let eig = eigh(&m).unwrap();
        assert_eq!(eig.eigenvalues, vec![-4.5]);
        assert_eq!(eig.eigenvectors, vec![1.0]);
    }

    #[test]
    fn eigh_rejects_nan() {
        let mut m = SymMatrix::identity(3);
        m.set(2, 1, f64::NAN);
        assert!(matches!(eigh(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn eigh_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let m = SymMatrix::from_fn(4, |i, j| (0..4).map(|k| b[k * 4 + i] * b[k * 4 + j]).sum());
        let eig = eigh(&m).unwrap();
        let r = reconstruct(&eig);
        let mut err = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                err += (r.get(i, j) - m.get(i, j)).powi(2);
            }
        }
        assert!(err.sqrt() <= 1e-10 * m.frobenius_norm().max(1.0));
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pseudo_solve_identity_and_rank_deficient() {
        let x = pseudo_solve(&SymMatrix::identity(2), &[1.0, 2.0], DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-15);

        let m = SymMatrix::from_diagonal(&[2.0, 0.0]);
        let x = pseudo_solve(&m, &[4.0, 0.0], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(x, vec![2.0, 0.0]);
    }

    #[test]
    fn pseudo_solve_rejects_indefinite() {
        let m = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(
            pseudo_solve(&m, &[1.0, 1.0], DEFAULT_RANK_TOL),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn pseudo_solve_zero_matrix_gives_zero() {
        let x = pseudo_solve(&SymMatrix::zeros(3), &[1.0, 2.0, 3.0], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn lambda_min_plus_cases() {
        let m = SymMatrix::from_diagonal(&[0.0, 0.5, 1.0]);
        assert_relative_eq!(lambda_min_plus(&m, DEFAULT_RANK_TOL).unwrap(), 0.5);
        assert_relative_eq!(lambda_min_plus(&SymMatrix::identity(3), DEFAULT_RANK_TOL).unwrap(), 1.0);
        assert_eq!(lambda_min_plus(&SymMatrix::zeros(2), DEFAULT_RANK_TOL).unwrap(), 0.0);
    }

    #[test]
    fn sigma_diagonal_and_rank_one() {
        let a = SparseColumnMatrix::from_columns(2, &[vec![(0, 3.0)], vec![(1, 1.0)]]).unwrap();
        let s = sigma_max_sq(&a, DEFAULT_POWER_ITERS, 1).unwrap();
        assert_relative_eq!(s, 9.0, max_relative = 1e-6);

        // single column with squared norm 7
        let a = SparseColumnMatrix::from_columns(3, &[vec![(0, 1.0), (1, 2.0), (2, 1.4142135623730951)]])
            .unwrap();
        let s = sigma_max_sq(&a, DEFAULT_POWER_ITERS, 3).unwrap();
        assert_relative_eq!(s, 7.0, max_relative = 1e-12);
    }

    #[test]
    fn sigma_zero_matrix() {
        let a = SparseColumnMatrix::from_columns(3, &[vec![], vec![]]).unwrap();
        assert!(matches!(sigma_max_sq(&a, 10, 0), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn sparse_validation() {
        assert!(SparseColumnMatrix::from_columns(3, &[vec![(2, 1.0), (1, 1.0)]]).is_err());
        assert!(SparseColumnMatrix::from_columns(3, &[vec![(3, 1.0)]]).is_err());
        assert!(SparseColumnMatrix::from_columns(3, &[vec![(0, 1.0), (0, 2.0)]]).is_err());
    }

    #[test]
    fn sparse_products_and_transpose() {
        let dense = [1.0, 0.0, 2.0, 0.0, 3.0, 4.0];
        let a = SparseColumnMatrix::from_dense_row_major(2, 3, &dense).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 2.0]), vec![1.0, 6.0, 10.0]);
        let t = a.transpose();
        assert_eq!(t.rows(), 3);
        assert_eq!(t.to_row_major(), vec![1.0, 0.0, 0.0, 3.0, 2.0, 4.0]);
        assert_eq!(t.transpose(), a);
    }
}
