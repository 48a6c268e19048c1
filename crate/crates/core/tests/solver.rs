mod common;

use common::*;
use nalgebra::DVector;
use rand::Rng;
use subspace_newton::linalg::{SparseColumnMatrix, DEFAULT_RANK_TOL};
use subspace_newton::solver::{
    line_search, newton_step, rsn_ls_step_with, rsn_step_with, run, run_observed, sketched_direction, LineSearchParams,
};
use subspace_newton::{
    Error, GlmObjective, Link, Method, SketchDistribution, SketchMatrix, SolverConfig, SolverState, StepMode,
};

#[test]
fn newton_direction_matches_pseudoinverse_oracle() {
    let mut r = rng(20);
    for _ in 0..30 {
        let d = r.random_range(2..12);
        let n = r.random_range(2..20);
        // Logistic with ridge, or squared loss with fewer samples than features (singular H).
        let obj = if r.random::<bool>() {
            random_logistic(&mut r, d, n, 1e-2)
        } else {
            let n = r.random_range(1..=d);
            GlmObjective::new(random_sparse(&mut r, d, n, 0.8), gaussian_vec(&mut r, n), 0.0, Link::Squared).unwrap()
        };
        let x: Vec<f64> = gaussian_vec(&mut r, d).iter().map(|v| 0.5 * v).collect();
        let state = SolverState::new(&obj, x.clone()).unwrap();
        let dir = sketched_direction(&state, &obj, &SketchMatrix::identity(d), DEFAULT_RANK_TOL).unwrap();
        let h = hessian_oracle(&obj, &x);
        let g = DVector::from_column_slice(&state.g);
        let oracle = -(pinv(&h, 1e-12) * &g);
        assert!(rel_err(&dir.direction, oracle.as_slice()) < 1e-8, "{:?} vs {oracle:?}", dir.direction);
    }
}

#[test]
fn identity_sketch_is_newton() {
    let mut r = rng(21);
    for _ in 0..20 {
        let obj = random_logistic(&mut r, 6, 15, 1e-2);
        let x = gaussian_vec(&mut r, 6);
        let state = SolverState::new(&obj, x).unwrap();
        let l_hat = obj.relative_constants(0).unwrap().l_hat;
        let a = rsn_step_with(&state, &obj, &SketchMatrix::identity(6), l_hat, DEFAULT_RANK_TOL).unwrap();
        let b = newton_step(&state, &obj, 1.0 / l_hat).unwrap();
        assert!(rel_err(&a.x, &b.x) <= 1e-12);
    }
}

#[test]
fn quadratic_newton_step_is_exact() {
    let mut r = rng(22);
    let obj = random_quadratic(&mut r, 8);
    let state = SolverState::new(&obj, gaussian_vec(&mut r, 8)).unwrap();
    let next = newton_step(&state, &obj, 1.0).unwrap();
    assert!(next.grad_norm() <= 1e-10);
}

#[test]
fn one_dimensional_line_search_matches_grid() {
    let mut r = rng(23);
    for _ in 0..30 {
        let n = r.random_range(2..12);
        let cols: Vec<Vec<(usize, f64)>> = (0..n).map(|_| vec![(0, r.sample(rand_distr::StandardNormal))]).collect();
        let a = SparseColumnMatrix::from_columns(1, &cols).unwrap();
        let obj = GlmObjective::new(a, random_labels(&mut r, n), 0.05, Link::Logistic).unwrap();
        let x0: f64 = 3.0 * r.sample::<f64, _>(rand_distr::StandardNormal);
        let state = SolverState::new(&obj, vec![x0]).unwrap();
        let next = rsn_ls_step_with(&state, &obj, &SketchMatrix::identity(1), &LineSearchParams::default(), DEFAULT_RANK_TOL)
            .unwrap();

        // Brute-force minimizer of the one-dimensional objective.
        let (lo, hi) = (-40.0, 40.0);
        let steps = 800_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let t = lo + (hi - lo) * i as f64 / steps as f64;
            let f = value_oracle(&obj, &[t]);
            if f < best.0 {
                best = (f, t);
            }
        }
        assert!((next.x[0] - best.1).abs() <= 1e-4, "{} vs {}", next.x[0], best.1);
    }
}

#[test]
fn line_search_on_linear_slope() {
    let t = line_search(|t| t - 3.7, -3.7, 1e-12, 80, 200).unwrap();
    assert!((t - 3.7).abs() <= 1e-12);
    let t = line_search(|t| 2.0 * t - 1.0, -1.0, 1e-12, 80, 200).unwrap();
    assert!((t - 0.5).abs() <= 1e-12);
    assert!(matches!(line_search(|t| t, 0.0, 1e-12, 80, 200), Err(Error::NotDescent(_))));
    assert!(matches!(line_search(|t| t + 1.0, 1.0, 1e-12, 80, 200), Err(Error::NotDescent(_))));
    assert!(matches!(line_search(|_| -1.0, -1.0, 1e-12, 10, 200), Err(Error::Unbounded(_))));
}

#[test]
fn full_sketch_rsn_tracks_newton() {
    let mut r = rng(24);
    let obj = random_logistic(&mut r, 7, 25, 1e-2);
    let x0 = gaussian_vec(&mut r, 7);
    let f0 = obj.value(&x0).unwrap();
    let dist = SketchDistribution::coordinate_block(7, 7).unwrap();
    let base = SolverConfig {
        tol: 1e-300,
        max_iter: 60,
        record_wall_clock: false,
        ..Default::default()
    };
    let mut rsn_iterates = Vec::new();
    let rsn = run_observed(&SolverConfig { method: Method::Rsn, ..base.clone() }, &obj, &dist, x0.clone(), |s| {
        rsn_iterates.push(s.x.clone())
    })
    .unwrap();
    let mut newton_iterates = Vec::new();
    let newton = run_observed(
        &SolverConfig { method: Method::Newton, ..base },
        &obj,
        &SketchDistribution::identity(7),
        x0,
        |s| newton_iterates.push(s.x.clone()),
    )
    .unwrap();
    assert!(rsn.state.f < f0);
    assert_eq!(newton.state.k, 60);
    assert_eq!(rsn_iterates.len(), newton_iterates.len());
    for (a, b) in rsn_iterates.iter().zip(&newton_iterates) {
        assert!(rel_err(a, b) <= 1e-10);
    }
}

#[test]
fn iterates_are_invariant_under_objective_scaling() {
    let mut r = rng(25);
    let obj = random_logistic(&mut r, 6, 20, 1e-2);
    let scaled = obj.scaled(123.0).unwrap();
    let x0 = gaussian_vec(&mut r, 6);
    let dist = SketchDistribution::coordinate_block(6, 2).unwrap().with_seed(3, 0);
    let config = SolverConfig {
        method: Method::Rsn,
        tol: 1e-300,
        max_iter: 25,
        record_wall_clock: false,
        ..Default::default()
    };
    let mut xs = Vec::new();
    run_observed(&config, &obj, &dist, x0.clone(), |s| xs.push(s.x.clone())).unwrap();
    let mut ys = Vec::new();
    run_observed(&config, &scaled, &dist, x0, |s| ys.push(s.x.clone())).unwrap();
    assert_eq!(xs.len(), ys.len());
    for (a, b) in xs.iter().zip(&ys) {
        assert!(rel_err(a, b) <= 1e-10);
    }
}

#[test]
fn gaussian_sketch_scale_is_immaterial() {
    let mut r = rng(28);
    let obj = random_logistic(&mut r, 9, 20, 1e-2);
    let state = SolverState::new(&obj, gaussian_vec(&mut r, 9)).unwrap();
    let s = SketchDistribution::gaussian(9, 4).unwrap().with_seed(2, 0).sample(0);
    let entries = s.to_dense();
    let scaled = SketchMatrix::dense(9, 4, entries.iter().map(|v| 17.0 * v).collect()).unwrap();
    let a = rsn_step_with(&state, &obj, &s, 3.0, DEFAULT_RANK_TOL).unwrap();
    let b = rsn_step_with(&state, &obj, &scaled, 3.0, DEFAULT_RANK_TOL).unwrap();
    assert!(rel_err(&a.x, &b.x) <= 1e-10);
}

#[test]
fn runs_are_reproducible() {
    let mut r = rng(26);
    let obj = random_logistic(&mut r, 10, 30, 1e-3);
    let x0 = vec![0.0; 10];
    let dist = SketchDistribution::gaussian(10, 3).unwrap().with_seed(8, 1);
    let config = SolverConfig {
        max_iter: 50,
        record_wall_clock: false,
        ..Default::default()
    };
    let a = run(&config, &obj, &dist, x0.clone()).unwrap();
    let b = run(&config, &obj, &dist, x0).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.state.x, b.state.x);
}

#[test]
fn every_method_decreases_the_objective() {
    let mut r = rng(27);
    let obj = random_logistic(&mut r, 8, 40, 1e-2);
    let x0 = gaussian_vec(&mut r, 8);
    let f0 = obj.value(&x0).unwrap();
    let dist = SketchDistribution::coordinate_block(8, 3).unwrap();
    for method in Method::ALL {
        for step_mode in [StepMode::FixedRelative, StepMode::LineSearch] {
            let config = SolverConfig {
                method,
                step_mode,
                max_iter: 300,
                record_wall_clock: false,
                ..Default::default()
            };
            let out = run(&config, &obj, &dist, x0.clone()).unwrap();
            assert!(out.state.f < f0, "{method} {step_mode:?}");
            if method != Method::Agd {
                let fs: Vec<f64> = out.trace.iter().map(|t| t.f).collect();
                assert!(fs.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs())), "{method}");
            }
        }
    }
}

#[test]
fn accelerated_beats_plain_gradient() {
    let obj = diagonal_quadratic(&[1.0, 0.5, 0.1, 0.02, 0.01]);
    let x0 = vec![1.0; 5];
    let dist = SketchDistribution::identity(5);
    let iterations = |method| {
        let config = SolverConfig {
            method,
            tol: 1e-6,
            max_iter: 100_000,
            record_wall_clock: false,
            ..Default::default()
        };
        let out = run(&config, &obj, &dist, x0.clone()).unwrap();
        assert!(out.converged);
        out.trace.len()
    };
    let gd = iterations(Method::Gd);
    let agd = iterations(Method::Agd);
    assert!(agd < gd, "agd {agd} vs gd {gd}");
}

#[test]
fn converged_start_records_nothing() {
    let obj = diagonal_quadratic(&[1.0, 2.0]);
    let out = run(&SolverConfig::default(), &obj, &SketchDistribution::identity(2), vec![0.0, 0.0]).unwrap();
    assert!(out.converged);
    assert!(out.trace.is_empty());
    assert_eq!(out.state.k, 0);
}

#[test]
fn errors_carry_the_iteration() {
    let obj = diagonal_quadratic(&[1.0, 2.0]);
    let config = SolverConfig {
        method: Method::Rsn,
        constants: Some(subspace_newton::RelativeConstants {
            l_hat: 0.2,
            mu_hat: 1.0,
            sigma_max_sq: 4.0,
            u: 1.0,
            ell: 1.0,
        }),
        ..Default::default()
    };
    // A step of 5 x Newton overshoots a quadratic and increases f.
    let err = run(&config, &obj, &SketchDistribution::identity(2), vec![1.0, 1.0]).unwrap_err();
    match err {
        Error::AtIteration { k, source } => {
            assert_eq!(k, 0);
            assert!(matches!(*source, Error::AscentDetected { .. }));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let obj = diagonal_quadratic(&[1.0]);
    let dist = SketchDistribution::identity(1);
    for config in [
        SolverConfig { tol: 0.0, ..Default::default() },
        SolverConfig { max_iter: 0, ..Default::default() },
    ] {
        assert!(matches!(run(&config, &obj, &dist, vec![1.0]), Err(Error::InvalidConfig(_))));
    }
    let wrong = SketchDistribution::identity(3);
    assert!(matches!(
        run(&SolverConfig::default(), &obj, &wrong, vec![1.0]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn method_names_parse() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("bfgs".parse::<Method>().is_err());
}
