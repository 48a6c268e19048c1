mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use subspace_newton::linalg::{
    eigh, lambda_min_plus, numerical_rank, pseudo_solve, sigma_max_sq, SparseColumnMatrix, SymMatrix, DEFAULT_POWER_ITERS,
    DEFAULT_RANK_TOL,
};
use subspace_newton::Error;

fn random_psd(rng: &mut impl Rng, order: usize, rank: usize) -> SymMatrix {
    let b = DMatrix::from_fn(rank, order, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    from_dmatrix(&(b.transpose() * b))
}

#[test]
fn eigh_reconstruction_and_orthogonality() {
    let mut r = rng(1);
    for order in [1, 2, 4, 7, 20, 60] {
        let m = random_psd(&mut r, order, order);
        let eig = eigh(&m).unwrap();
        let q = DMatrix::from_row_slice(order, order, &eig.eigenvectors);
        let lam = DMatrix::from_diagonal(&DVector::from_vec(eig.eigenvalues.clone()));
        let dm = to_dmatrix(&m);
        let recon = &q * lam * q.transpose();
        let scale = dm.norm().max(1.0);
        assert!((recon - &dm).norm() <= 1e-10 * scale, "order {order}");
        assert!((q.transpose() * &q - DMatrix::identity(order, order)).norm() <= 1e-10);
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));

        let mut oracle: Vec<f64> = dm.symmetric_eigenvalues().iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (a, b) in eig.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn eigh_is_bitwise_deterministic() {
    let mut r = rng(2);
    let m = random_psd(&mut r, 15, 9);
    let a = eigh(&m).unwrap();
    let b = eigh(&m).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.eigenvectors, b.eigenvectors);
}

#[test]
fn eigh_on_indefinite_input() {
    let m = SymMatrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
    let eig = eigh(&m).unwrap();
    assert!((eig.eigenvalues[0] + 1.0).abs() < 1e-15);
    assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-15);
    assert!(matches!(pseudo_solve(&m, &[1.0, 0.0], DEFAULT_RANK_TOL), Err(Error::NotPsd { .. })));
}

#[test]
fn eigh_rejects_infinity() {
    let m = SymMatrix::from_diagonal(&[1.0, f64::INFINITY]);
    assert!(matches!(eigh(&m), Err(Error::NonFinite(_))));
}

#[test]
fn least_norm_on_rank_deficient_system() {
    let mut r = rng(3);
    for _ in 0..20 {
        let m = random_psd(&mut r, 3, 2);
        let dm = to_dmatrix(&m);
        let y = DVector::from_vec(gaussian_vec(&mut r, 3));
        let b = &dm * y;
        let x = pseudo_solve(&m, b.as_slice(), DEFAULT_RANK_TOL).unwrap();
        let xv = DVector::from_column_slice(&x);
        assert!((&dm * &xv - &b).norm() <= 1e-8 * b.norm());

        let oracle = pinv(&dm, 1e-12) * &b;
        assert!(rel_err(&x, oracle.as_slice()) < 1e-8);

        // Nullspace direction from an independent decomposition.
        let eig = dm.clone().symmetric_eigen();
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let z = eig.eigenvectors.column(k).into_owned();
        for _ in 0..100 {
            let t: f64 = r.sample(rand_distr::StandardNormal);
            assert!(xv.norm() <= (&xv + &z * t).norm() + 1e-12);
        }
    }
}

#[test]
fn lambda_min_plus_examples() {
    assert_eq!(lambda_min_plus(&SymMatrix::from_diagonal(&[0.0, 0.5, 1.0]), DEFAULT_RANK_TOL).unwrap(), 0.5);
    assert_eq!(lambda_min_plus(&SymMatrix::identity(4), DEFAULT_RANK_TOL).unwrap(), 1.0);
    assert_eq!(lambda_min_plus(&SymMatrix::zeros(3), DEFAULT_RANK_TOL).unwrap(), 0.0);
}

#[test]
fn numerical_rank_of_products() {
    let mut r = rng(4);
    for rank in 1..6 {
        let m = random_psd(&mut r, 6, rank);
        assert_eq!(numerical_rank(&m, 1e-10).unwrap(), rank);
    }
}

#[test]
fn sigma_of_embedded_diagonal() {
    let a = SparseColumnMatrix::from_columns(3, &[vec![(0, 3.0)], vec![(2, 1.0)]]).unwrap();
    let s = sigma_max_sq(&a, DEFAULT_POWER_ITERS, 0).unwrap();
    assert!((s - 9.0).abs() <= 1e-6 * 9.0);
}

#[test]
fn sigma_of_single_column() {
    let a = SparseColumnMatrix::from_columns(3, &[vec![(0, 1.0), (1, 2.0), (2, (2.0f64).sqrt())]]).unwrap();
    let s = sigma_max_sq(&a, DEFAULT_POWER_ITERS, 5).unwrap();
    assert!((s - 7.0).abs() <= 1e-12 * 7.0);
}

#[test]
fn sigma_with_planted_gap_matches_svd() {
    let mut r = rng(5);
    for trial in 0..10 {
        // A = U diag(s) V^T with s_1 / s_2 = 1.01 and the rest smaller.
        let (d, n) = (20, 30);
        let u = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal)).qr().q();
        let v = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal)).qr().q();
        let mut s = DMatrix::zeros(d, n);
        s[(0, 0)] = 5.05;
        s[(1, 1)] = 5.0;
        for i in 2..d {
            s[(i, i)] = 4.0 * r.random::<f64>();
        }
        let dense = &u * s * v.transpose();
        let mut row_major = Vec::with_capacity(d * n);
        for i in 0..d {
            for j in 0..n {
                let x = dense[(i, j)];
                row_major.push(if x.abs() < 0.02 { 0.0 } else { x });
            }
        }
        let a = SparseColumnMatrix::from_dense_row_major(d, n, &row_major).unwrap();
        let oracle = DMatrix::from_row_slice(d, n, &row_major).singular_values().max().powi(2);
        let est = sigma_max_sq(&a, DEFAULT_POWER_ITERS, trial).unwrap();
        assert!((est - oracle).abs() <= 1e-6 * oracle, "trial {trial}: {est} vs {oracle}");
        assert_eq!(est, sigma_max_sq(&a, DEFAULT_POWER_ITERS, trial).unwrap());
    }
}

#[test]
fn sparse_products_match_dense() {
    let mut r = rng(6);
    let a = random_sparse(&mut r, 7, 11, 0.4);
    let dense = DMatrix::from_row_slice(7, 11, &a.to_row_major());
    let x = gaussian_vec(&mut r, 11);
    let v = gaussian_vec(&mut r, 7);
    let ax = &dense * DVector::from_column_slice(&x);
    let atv = dense.transpose() * DVector::from_column_slice(&v);
    assert!(rel_err(&a.mul_vec(&x), ax.as_slice()) < 1e-14);
    assert!(rel_err(&a.tr_mul_vec(&v), atv.as_slice()) < 1e-14);
    assert_eq!(a.transpose().transpose(), a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudo_inverse_reproduces_range_component(seed in any::<u64>(), order in 1usize..8, rank_frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let rank = 1 + ((order - 1) as f64 * rank_frac) as usize;
        let m = random_psd(&mut r, order, rank);
        let y = gaussian_vec(&mut r, order);
        let my = m.mul_vec(&y);
        let x = pseudo_solve(&m, &my, DEFAULT_RANK_TOL).unwrap();
        let mx = m.mul_vec(&x);
        let scale = my.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let resid = mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(resid <= 1e-8 * scale);
    }

    #[test]
    fn nonzero_psd_has_positive_lambda_min_plus(seed in any::<u64>(), order in 1usize..8, rank in 1usize..8) {
        let mut r = rng(seed);
        let m = random_psd(&mut r, order, rank.min(order));
        prop_assert!(lambda_min_plus(&m, DEFAULT_RANK_TOL).unwrap() > 0.0);
    }
}
