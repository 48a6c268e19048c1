#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subspace_newton::linalg::{SparseColumnMatrix, SymMatrix};
use subspace_newton::{GlmObjective, Link};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random `d x n` sparse matrix with roughly `density` of its entries set.
pub fn random_sparse(rng: &mut impl Rng, d: usize, n: usize, density: f64) -> SparseColumnMatrix {
    let cols: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|_| {
            let mut col = Vec::new();
            for i in 0..d {
                if rng.random::<f64>() < density {
                    col.push((i, rng.sample::<f64, _>(StandardNormal)));
                }
            }
            col
        })
        .collect();
    SparseColumnMatrix::from_columns(d, &cols).unwrap()
}

pub fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

pub fn random_logistic(rng: &mut impl Rng, d: usize, n: usize, reg: f64) -> GlmObjective {
    let a = random_sparse(rng, d, n, 0.6);
    let y = random_labels(rng, n);
    GlmObjective::new(a, y, reg, Link::Logistic).unwrap()
}

/// Squared-link objective with a positive definite Hessian.
pub fn random_quadratic(rng: &mut impl Rng, d: usize) -> GlmObjective {
    let n = d + 5;
    let a = random_sparse(rng, d, n, 1.0);
    let y = gaussian_vec(rng, n);
    GlmObjective::new(a, y, 1e-2, Link::Squared).unwrap()
}

/// `f(x) = (1/2) sum_i h_i x_i^2`.
pub fn diagonal_quadratic(diag: &[f64]) -> GlmObjective {
    let n = diag.len();
    let cols: Vec<Vec<(usize, f64)>> = diag
        .iter()
        .enumerate()
        .map(|(i, &h)| vec![(i, (n as f64 * h).sqrt())])
        .collect();
    let a = SparseColumnMatrix::from_columns(n, &cols).unwrap();
    GlmObjective::new(a, vec![0.0; n], 0.0, Link::Squared).unwrap()
}

pub fn dense_data(obj: &GlmObjective) -> DMatrix<f64> {
    let a = obj.data();
    DMatrix::from_row_slice(a.rows(), a.cols(), &a.to_row_major())
}

/// `(1/n) sum phi''_i a_i a_i^T + reg I`, assembled densely.
pub fn hessian_oracle(obj: &GlmObjective, x: &[f64]) -> DMatrix<f64> {
    let a = dense_data(obj);
    let xv = DVector::from_column_slice(x);
    let n = obj.samples() as f64;
    let mut h = DMatrix::identity(obj.dim(), obj.dim()) * obj.reg();
    for j in 0..obj.samples() {
        let col = a.column(j);
        let w = obj.link().phi_second(col.dot(&xv), obj.targets()[j]) / n;
        h += col * col.transpose() * w;
    }
    h
}

/// `(1/n) sum phi_i(a_i^T x) + (reg/2)|x|^2` by a plain loop over dense columns.
pub fn value_oracle(obj: &GlmObjective, x: &[f64]) -> f64 {
    let a = dense_data(obj);
    let mut total = 0.0;
    for j in 0..obj.samples() {
        let t: f64 = (0..obj.dim()).map(|i| a[(i, j)] * x[i]).sum();
        let y = obj.targets()[j];
        total += match obj.link() {
            Link::Logistic => (1.0 + (-y * t).exp()).ln(),
            Link::Squared => 0.5 * (t - y) * (t - y),
        };
    }
    total / obj.samples() as f64 + 0.5 * obj.reg() * x.iter().map(|v| v * v).sum::<f64>()
}

pub fn to_dmatrix(m: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.order(), m.order(), &m.to_row_major())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::from_fn(m.nrows(), |r, c| 0.5 * (m[(r, c)] + m[(c, r)]))
}

/// Moore-Penrose pseudoinverse through nalgebra's SVD.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.max();
    svd.pseudo_inverse(rel_tol * top.max(f64::MIN_POSITIVE)).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
