//! Estimates of the constants in the convergence theory and audits of the
//! bounds that involve them. Everything here forms dense `d x d` matrices and
//! is meant for small instances.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::glm::{GlmObjective, RelativeConstants};
use crate::linalg::{self, dot, eigh, lambda_min_plus, norm, numerical_rank, pseudo_solve, SymMatrix, DEFAULT_RANK_TOL};
use crate::sketch::{SketchDistribution, SketchMatrix};
use crate::solver::{self, LineSearchParams, SolverState};

/// Largest dimension accepted by the dense diagnostics.
pub const DIAGNOSTIC_DIM_CAP: usize = 200;

/// Relative cutoff for the spectrum of an expected projection, whose
/// eigenvalues live in `[0, 1]`.
pub const PROJECTION_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Enumerate every outcome of a finite-support distribution.
    Exact { max_outcomes: usize },
    /// Average `samples` draws `dist.sample(0..samples)`.
    MonteCarlo { samples: usize },
}

impl ProjectionMode {
    pub fn exact() -> Self {
        ProjectionMode::Exact { max_outcomes: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct ExpectedProjection {
    pub mean: SymMatrix,
    /// Entrywise standard error of the mean; `None` for exact enumeration.
    pub std_error: Option<SymMatrix>,
    pub samples: usize,
}

fn check_cap(d: usize) -> Result<()> {
    if d > DIAGNOSTIC_DIM_CAP {
        Err(Error::TooLarge {
            dim: d,
            cap: DIAGNOSTIC_DIM_CAP,
        })
    } else {
        Ok(())
    }
}

/// `H(x)^{1/2}` from the dense Hessian, clipping rounding-level negative eigenvalues.
pub fn hessian_sqrt(obj: &GlmObjective, x: &[f64]) -> Result<SymMatrix> {
    check_cap(obj.dim())?;
    let h = obj.dense_hessian(x)?;
    Ok(eigh(&h)?.spectral_map(|l| l.max(0.0).sqrt()))
}

/// `P = H^{1/2} S (S^T H S)^+ S^T H^{1/2}` for one sketch, with `S^T H S`
/// formed as `M^T M`, `M = H^{1/2} S`.
pub fn sampled_projection(h_half: &SymMatrix, s: &SketchMatrix, rank_tol: f64) -> Result<SymMatrix> {
    let d = h_half.order();
    if s.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s.dim(),
        });
    }
    let cols = s.size();
    // M is d x cols, row-major.
    let m: Vec<f64> = match s {
        SketchMatrix::Identity { .. } => h_half.to_row_major(),
        SketchMatrix::CoordinateBlock { indices, .. } => {
            let mut m = vec![0.0; d * cols];
            for i in 0..d {
                for (c, &j) in indices.iter().enumerate() {
                    m[i * cols + c] = h_half.get(i, j);
                }
            }
            m
        }
        _ => {
            let dense = s.to_dense();
            let mut m = vec![0.0; d * cols];
            for i in 0..d {
                for k in 0..d {
                    let h = h_half.get(i, k);
                    if h != 0.0 {
                        for c in 0..cols {
                            m[i * cols + c] += h * dense[k * cols + c];
                        }
                    }
                }
            }
            m
        }
    };
    let mtm = SymMatrix::from_fn(cols, |a, b| (0..d).map(|i| m[i * cols + a] * m[i * cols + b]).sum());
    let eig = eigh(&mtm)?;
    linalg::check_psd(&eig, rank_tol)?;
    let cutoff = rank_tol * eig.largest().max(0.0);
    let mut p = SymMatrix::zeros(d);
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= cutoff || lam <= 0.0 {
            continue;
        }
        let q = eig.vector(idx);
        let v: Vec<f64> = (0..d).map(|i| dot(&m[i * cols..(i + 1) * cols], &q)).collect();
        for r in 0..d {
            for c in 0..=r {
                p.add(r, c, v[r] * v[c] / lam);
            }
        }
    }
    Ok(p)
}

/// `E[P(x)]` over the sketch distribution.
pub fn expected_projection(
    obj: &GlmObjective,
    x: &[f64],
    dist: &SketchDistribution,
    mode: ProjectionMode,
) -> Result<ExpectedProjection> {
    check_cap(obj.dim())?;
    let h_half = hessian_sqrt(obj, x)?;
    expected_projection_with(&h_half, dist, mode)
}

fn expected_projection_with(h_half: &SymMatrix, dist: &SketchDistribution, mode: ProjectionMode) -> Result<ExpectedProjection> {
    let d = h_half.order();
    match mode {
        ProjectionMode::Exact { max_outcomes } => {
            let outcomes = dist.outcomes(max_outcomes).ok_or_else(|| {
                Error::InvalidConfig("sketch distribution has no enumerable finite support".into())
            })?;
            let mut mean = SymMatrix::zeros(d);
            for (p, s) in &outcomes {
                let proj = sampled_projection(h_half, s, DEFAULT_RANK_TOL)?;
                for r in 0..d {
                    for c in 0..=r {
                        mean.add(r, c, p * proj.get(r, c));
                    }
                }
            }
            Ok(ExpectedProjection {
                mean,
                std_error: None,
                samples: outcomes.len(),
            })
        }
        ProjectionMode::MonteCarlo { samples } => {
            if samples < 2 {
                return Err(Error::InvalidConfig("monte-carlo needs at least 2 samples".into()));
            }
            let mut sum = SymMatrix::zeros(d);
            let mut sum_sq = SymMatrix::zeros(d);
            for k in 0..samples {
                let proj = sampled_projection(h_half, &dist.sample(k as u64), DEFAULT_RANK_TOL)?;
                for r in 0..d {
                    for c in 0..=r {
                        let v = proj.get(r, c);
                        sum.add(r, c, v);
                        sum_sq.add(r, c, v * v);
                    }
                }
            }
            let n = samples as f64;
            let mean = SymMatrix::from_fn(d, |r, c| sum.get(r, c) / n);
            let std_error = SymMatrix::from_fn(d, |r, c| {
                let m = mean.get(r, c);
                let var = ((sum_sq.get(r, c) / n - m * m) * n / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            });
            Ok(ExpectedProjection {
                mean,
                std_error: Some(std_error),
                samples,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoMethod {
    ExactEnumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exactness {
    /// `range(E[P]) = range(H)` numerically.
    Verified,
    /// The ranges differ; the reported value does not govern the rate.
    Unverified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub value: f64,
    pub method: RhoMethod,
    pub samples: usize,
    /// Zero for exact enumeration.
    pub std_error: f64,
    pub exactness: Exactness,
}

/// `rho(x) = lambda_min^+(E[P(x)])`.
pub fn rho_at(obj: &GlmObjective, x: &[f64], dist: &SketchDistribution, mode: ProjectionMode) -> Result<RhoEstimate> {
    check_cap(obj.dim())?;
    let h = obj.dense_hessian(x)?;
    let h_eig = eigh(&h)?;
    let h_half = h_eig.spectral_map(|l| l.max(0.0).sqrt());
    let proj = expected_projection_with(&h_half, dist, mode)?;
    let eig = eigh(&proj.mean)?;
    let value = lambda_min_plus(&proj.mean, PROJECTION_RANK_TOL)?.clamp(0.0, 1.0);

    let h_rank = rank_of(&h_eig.eigenvalues, PROJECTION_RANK_TOL);
    let p_rank = rank_of(&eig.eigenvalues, PROJECTION_RANK_TOL);
    let exactness = if h_rank == p_rank {
        Exactness::Verified
    } else {
        Exactness::Unverified
    };

    let (method, std_error) = match mode {
        ProjectionMode::Exact { .. } => (RhoMethod::ExactEnumeration, 0.0),
        ProjectionMode::MonteCarlo { samples } => {
            // Delta method: the derivative of the eigenvalue is v^T dP v at its eigenvector.
            let cutoff = PROJECTION_RANK_TOL * eig.largest().max(0.0);
            let idx = eig.eigenvalues.iter().position(|&l| l > cutoff).unwrap_or(0);
            let v = eig.vector(idx);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for k in 0..samples {
                let p = sampled_projection(&h_half, &dist.sample(k as u64), DEFAULT_RANK_TOL)?;
                let q = p.quadratic_form(&v);
                sum += q;
                sum_sq += q * q;
            }
            let n = samples as f64;
            let m = sum / n;
            let var = ((sum_sq / n - m * m) * n / (n - 1.0)).max(0.0);
            (RhoMethod::MonteCarlo, (var / n).sqrt())
        }
    };
    Ok(RhoEstimate {
        value,
        method,
        samples: proj.samples,
        std_error,
        exactness,
    })
}

fn rank_of(eigenvalues: &[f64], rank_tol: f64) -> usize {
    let top = eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    eigenvalues.iter().filter(|&&l| l > rank_tol * top && l > 0.0).count()
}

/// Smallest `rho(x)` over a set of points, an over-estimate of the level-set minimum.
pub fn min_rho(
    obj: &GlmObjective,
    points: &[Vec<f64>],
    dist: &SketchDistribution,
    mode: ProjectionMode,
) -> Result<RhoEstimate> {
    let mut best: Option<RhoEstimate> = None;
    for x in points {
        let est = rho_at(obj, x, dist, mode)?;
        if best.is_none_or(|b| est.value < b.value) {
            best = Some(est);
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("no points given".into()))
}

/// The uniform single-coordinate value `rho = alpha / d` with
/// `alpha = lambda_min^+(H^{1/2} Diag(H)^{-1} H^{1/2})`.
pub fn uniform_coordinate_rho(obj: &GlmObjective, x: &[f64]) -> Result<f64> {
    check_cap(obj.dim())?;
    let d = obj.dim();
    let h = obj.dense_hessian(x)?;
    let diag = h.diagonal();
    if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateColumn(i));
    }
    let h_half = eigh(&h)?.spectral_map(|l| l.max(0.0).sqrt());
    let m = SymMatrix::from_fn(d, |r, c| (0..d).map(|k| h_half.get(r, k) * h_half.get(k, c) / diag[k]).sum());
    Ok(lambda_min_plus(&m, PROJECTION_RANK_TOL)? / d as f64)
}

/// Whether `E[S S^T]` is invertible and `S^T H S` keeps the nullspace of `S`
/// for every outcome: together these imply exactness.
pub fn exactness_sufficient(obj: &GlmObjective, x: &[f64], dist: &SketchDistribution, max_outcomes: usize) -> Result<bool> {
    check_cap(obj.dim())?;
    let d = obj.dim();
    let outcomes = dist
        .outcomes(max_outcomes)
        .ok_or_else(|| Error::InvalidConfig("sketch distribution has no enumerable finite support".into()))?;
    let mut second_moment = SymMatrix::zeros(d);
    for (p, s) in &outcomes {
        if !crate::sketch::check_nullspace_preserving(s, obj, &[x.to_vec()], DEFAULT_RANK_TOL)? {
            return Ok(false);
        }
        let dense = s.to_dense();
        let cols = s.size();
        for r in 0..d {
            for c in 0..=r {
                let v: f64 = (0..cols).map(|j| dense[r * cols + j] * dense[c * cols + j]).sum();
                second_moment.add(r, c, p * v);
            }
        }
    }
    Ok(numerical_rank(&second_moment, PROJECTION_RANK_TOL)? == d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `1 - rho mu / L`.
    pub theoretical_factor: f64,
    /// Mean of the per-step ratios `(f_{k+1} - f_*) / (f_k - f_*)`.
    pub empirical_factor: f64,
    pub std_error: f64,
    pub ratio_count: usize,
    /// Iterations after which the linear bound guarantees the gap shrank by `epsilon`.
    pub iterations_bound: f64,
    /// `2 L R^2 / (rho k)` for `k = 1..`, when an estimate of `R` was supplied.
    pub sublinear_bound_curve: Vec<f64>,
    pub violation: bool,
}

/// Compares an ensemble of objective traces (`traces[run][k] = f(x_k)`) with the linear rate.
///
/// Steps starting from a gap `<= gap_floor` are skipped: their ratio is rounding noise.
#[allow(clippy::too_many_arguments)]
pub fn rate_report(
    traces: &[Vec<f64>],
    f_star: f64,
    rho: f64,
    constants: &RelativeConstants,
    max_k: usize,
    gap_floor: f64,
    epsilon: f64,
    r_hat: Option<f64>,
) -> RateReport {
    let theoretical_factor = 1.0 - rho * constants.mu_hat / constants.l_hat;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut longest = 0;
    for trace in traces {
        longest = longest.max(trace.len());
        for k in 0..trace.len().saturating_sub(1).min(max_k) {
            let gap = trace[k] - f_star;
            if gap <= gap_floor {
                continue;
            }
            let ratio = (trace[k + 1] - f_star).max(0.0) / gap;
            sum += ratio;
            sum_sq += ratio * ratio;
            count += 1;
        }
    }
    let (empirical_factor, std_error) = if count > 1 {
        let n = count as f64;
        let m = sum / n;
        let var = ((sum_sq / n - m * m) * n / (n - 1.0)).max(0.0);
        (m, (var / n).sqrt())
    } else {
        (if count == 1 { sum } else { 0.0 }, 0.0)
    };
    let iterations_bound = if rho > 0.0 {
        constants.l_hat / (rho * constants.mu_hat) * (1.0 / epsilon).ln()
    } else {
        f64::INFINITY
    };
    let sublinear_bound_curve = match r_hat {
        Some(r) if rho > 0.0 => (1..longest.max(2))
            .map(|k| 2.0 * constants.l_hat * r * r / (rho * k as f64))
            .collect(),
        _ => Vec::new(),
    };
    RateReport {
        theoretical_factor,
        empirical_factor,
        std_error,
        ratio_count: count,
        iterations_bound,
        sublinear_bound_curve,
        violation: empirical_factor > theoretical_factor + 3.0 * std_error,
    }
}

/// `E_k[f(x_{k+1})] - f_*` computed exactly over the sketch outcomes, next to
/// the one-step bound `(1 - rho(x) mu / L)(f(x) - f_*)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalStep {
    pub gap: f64,
    pub expected_next_gap: f64,
    pub rho: f64,
    pub bound: f64,
}

pub fn conditional_step(
    obj: &GlmObjective,
    x: &[f64],
    dist: &SketchDistribution,
    constants: &RelativeConstants,
    f_star: f64,
    max_outcomes: usize,
) -> Result<ConditionalStep> {
    let outcomes = dist
        .outcomes(max_outcomes)
        .ok_or_else(|| Error::InvalidConfig("sketch distribution has no enumerable finite support".into()))?;
    let state = SolverState::new(obj, x.to_vec())?;
    let mut expected = 0.0;
    for (p, s) in &outcomes {
        let next = solver::rsn_step_with(&state, obj, s, constants.l_hat, DEFAULT_RANK_TOL)?;
        expected += p * next.f;
    }
    let rho = rho_at(obj, x, dist, ProjectionMode::Exact { max_outcomes })?.value;
    let gap = state.f - f_star;
    Ok(ConditionalStep {
        gap,
        expected_next_gap: expected - f_star,
        rho,
        bound: (1.0 - rho * constants.mu_hat / constants.l_hat) * gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inequality {
    /// `f(x) <= f(y) + <g(y), x - y> + (L/2) |x - y|^2_{H(y)}`
    Smoothness,
    /// `f(x) >= f(y) + <g(y), x - y> + (mu/2) |x - y|^2_{H(y)}`
    Convexity,
}

/// A pair of points at which a relative-constant inequality fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub inequality: Inequality,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub f_x: f64,
    /// The quadratic model at `y` evaluated at `x`.
    pub model: f64,
    pub excess: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let which = match self.inequality {
            Inequality::Smoothness => "smoothness",
            Inequality::Convexity => "convexity",
        };
        write!(f, "{which} bound fails by {:e} (f(x) = {:e}, model = {:e})", self.excess, self.f_x, self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeAudit {
    pub pairs: usize,
    /// Largest `f(x) - T(x, y)` seen, relative to `1 + |f(y)|`.
    pub max_smoothness_excess: f64,
    /// Largest lower-model excess seen, relative to `1 + |f(y)|`.
    pub max_convexity_excess: f64,
    /// `max |x - y|^2_{H(x)} / |x - y|^2_{H(y)}` over the sampled pairs.
    pub c_stability_ratio: f64,
}

/// Slack allowed on each audited inequality, relative to `1 + |f(y)|`.
pub const AUDIT_SLACK: f64 = 1e-9;

/// Checks both relative inequalities on `pair_count` pairs drawn from the
/// level set of `x0`.
pub fn verify_relative_constants(
    obj: &GlmObjective,
    constants: &RelativeConstants,
    x0: &[f64],
    pair_count: usize,
    seed: u64,
) -> Result<RelativeAudit> {
    let mut sampler = LevelSetSampler::new(obj, x0.to_vec(), seed)?;
    let points = sampler.take(2 * pair_count)?;
    let mut audit = RelativeAudit {
        pairs: pair_count,
        max_smoothness_excess: f64::NEG_INFINITY,
        max_convexity_excess: f64::NEG_INFINITY,
        c_stability_ratio: 1.0,
    };
    for i in 0..pair_count {
        let (x, y) = (&points[i], &points[i + pair_count]);
        let ex = obj.evaluate(x)?;
        let ey = obj.evaluate(y)?;
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let hy = obj.hessian_quadratic_from(&ey.margins, &diff);
        let hx = obj.hessian_quadratic_from(&ex.margins, &diff);
        let linear = ey.value + dot(&ey.gradient, &diff);
        let upper = linear + 0.5 * constants.l_hat * hy;
        let lower = linear + 0.5 * constants.mu_hat * hy;
        let scale = 1.0 + ey.value.abs();
        let smooth_excess = (ex.value - upper) / scale;
        let convex_excess = (lower - ex.value) / scale;
        audit.max_smoothness_excess = audit.max_smoothness_excess.max(smooth_excess);
        audit.max_convexity_excess = audit.max_convexity_excess.max(convex_excess);
        if hy > 0.0 {
            audit.c_stability_ratio = audit.c_stability_ratio.max(hx / hy);
        }
        let failed = if smooth_excess > AUDIT_SLACK {
            Some((Inequality::Smoothness, upper, smooth_excess))
        } else if convex_excess > AUDIT_SLACK {
            Some((Inequality::Convexity, lower, convex_excess))
        } else {
            None
        };
        if let Some((inequality, model, excess)) = failed {
            return Err(Error::ViolationFound(Box::new(Witness {
                inequality,
                x: x.clone(),
                y: y.clone(),
                f_x: ex.value,
                model,
                excess,
            })));
        }
    }
    Ok(audit)
}

/// `max_k |x_k - x_*|_{H(x_k)}` over the visited iterates: a lower estimate of
/// the level-set constant of the sublinear bound.
pub fn estimate_r(obj: &GlmObjective, iterates: &[Vec<f64>], x_star: &[f64]) -> Result<f64> {
    let mut best = 0.0f64;
    for x in iterates {
        let diff: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
        best = best.max(obj.hessian_quadratic(x, &diff)?.sqrt());
    }
    Ok(best)
}

/// Hit-and-run sampler over the level set `{x : f(x) <= f(x0)}`.
///
/// Each move picks a uniformly random direction, locates both ends of the
/// level set along that line by bracketing and bisection, and jumps to a
/// uniform point in between.
pub struct LevelSetSampler<'a> {
    obj: &'a GlmObjective,
    current: Vec<f64>,
    margins: Vec<f64>,
    level: f64,
    max_step: f64,
    rng: ChaCha8Rng,
}

impl<'a> LevelSetSampler<'a> {
    pub fn new(obj: &'a GlmObjective, x0: Vec<f64>, seed: u64) -> Result<Self> {
        let margins = obj.margins(&x0)?;
        let level = obj.value_from_margins(&margins, &x0);
        let max_step = 1e3 * (1.0 + norm(&x0));
        Ok(Self {
            obj,
            current: x0,
            margins,
            level,
            max_step,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Advances the chain and returns the new point.
    pub fn next_point(&mut self) -> Result<Vec<f64>> {
        let d = self.obj.dim();
        let mut u: Vec<f64> = (0..d).map(|_| self.rng.sample(StandardNormal)).collect();
        let len = norm(&u);
        if len == 0.0 {
            return Ok(self.current.clone());
        }
        u.iter_mut().for_each(|v| *v /= len);
        let w = self.obj.data().tr_mul_vec(&u);
        let hi = self.boundary(&u, &w, 1.0);
        let lo = -self.boundary(&u, &w, -1.0);
        let t = lo + (hi - lo) * self.rng.random::<f64>();
        linalg::axpy(t, &u, &mut self.current);
        for (m, wi) in self.margins.iter_mut().zip(&w) {
            *m += t * wi;
        }
        // Re-anchor against drift in the running margins.
        if self.obj.value_from_margins(&self.margins, &self.current) > self.level {
            self.margins = self.obj.margins(&self.current)?;
        }
        Ok(self.current.clone())
    }

    pub fn take(&mut self, count: usize) -> Result<Vec<Vec<f64>>> {
        (0..count).map(|_| self.next_point()).collect()
    }

    /// Largest `t >= 0` (up to bisection accuracy) with `f(x + sign t u) <= level`.
    fn boundary(&self, u: &[f64], w: &[f64], sign: f64) -> f64 {
        let xx = dot(&self.current, &self.current);
        let xu = dot(&self.current, u);
        let obj = self.obj;
        let inside = |t: f64| {
            let s = sign * t;
            let point_margins: Vec<f64> = self.margins.iter().zip(w).map(|(m, wi)| m + s * wi).collect();
            let sq = xx + 2.0 * s * xu + s * s;
            obj.value_from_parts(&point_margins, sq.max(0.0)) <= self.level
        };
        let mut lo = 0.0;
        let mut hi = 1.0;
        while inside(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > self.max_step {
                return self.max_step;
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if inside(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Minimizer and minimum found by Newton's method with exact line search,
/// iterated until `|g| <= tol` or no further progress is possible.
pub fn reference_minimum(obj: &GlmObjective, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let mut state = SolverState::new(obj, x0)?;
    let params = LineSearchParams::default();
    let mut stalled = 0;
    for _ in 0..max_iter {
        if state.grad_norm() <= tol {
            break;
        }
        match solver::newton_ls_step(&state, obj, &params) {
            // The step already passed the solver's ascent check, so a rise in f is rounding.
            Ok(next) => {
                if next.f < state.f || next.grad_norm() < state.grad_norm() {
                    stalled = 0;
                    state = next;
                } else {
                    stalled += 1;
                    if stalled >= 3 {
                        break;
                    }
                }
            }
            // Near the optimum the slope is pure rounding noise.
            Err(_) if state.grad_norm() <= 1e3 * tol.max(1e-12) => break,
            Err(e) => return Err(e),
        }
    }
    let f = state.f;
    Ok((state.x, f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulationCheck {
    /// `-(1/L) S (S^T H S)^+ S^T g`
    pub algorithm_direction: Vec<f64>,
    /// `S lam` with `lam` minimizing the model `T(x + S lam, x)` directly.
    pub subspace_direction: Vec<f64>,
    /// `(1/L) P n(x)` with `P = S (S^T H S)^+ S^T H` and `n(x) = -H^+ g`.
    pub projected_newton_direction: Vec<f64>,
    /// `T(x_+, x) - f(x)`
    pub model_decrease: f64,
    /// `-(1/2L) g^T S (S^T H S)^+ S^T g`
    pub predicted_decrease: f64,
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

impl FormulationCheck {
    /// Largest pairwise relative distance between the three directions.
    pub fn direction_disagreement(&self) -> f64 {
        relative_gap(&self.algorithm_direction, &self.subspace_direction)
            .max(relative_gap(&self.algorithm_direction, &self.projected_newton_direction))
            .max(relative_gap(&self.subspace_direction, &self.projected_newton_direction))
    }

    pub fn decrease_residual(&self) -> f64 {
        let scale = self.predicted_decrease.abs();
        let diff = (self.model_decrease - self.predicted_decrease).abs();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Computes the step three independent ways. Requires `S^T H S` positive definite.
pub fn formulation_check(obj: &GlmObjective, x: &[f64], s: &SketchMatrix, l_hat: f64) -> Result<FormulationCheck> {
    check_cap(obj.dim())?;
    let d = obj.dim();
    let state = SolverState::new(obj, x.to_vec())?;
    let g = &state.g;

    let dir = solver::sketched_direction(&state, obj, s, DEFAULT_RANK_TOL)?;
    let algorithm_direction: Vec<f64> = dir.direction.iter().map(|v| v / l_hat).collect();

    // Direct minimization of the s-dimensional model with S^T H S assembled densely.
    let h = obj.dense_hessian(x)?;
    let cols = s.size();
    let sd = s.to_dense();
    let hs: Vec<f64> = (0..d)
        .flat_map(|i| {
            let sd = &sd;
            let h = &h;
            (0..cols).map(move |c| (0..d).map(|k| h.get(i, k) * sd[k * cols + c]).sum::<f64>())
        })
        .collect();
    let shs = SymMatrix::from_fn(cols, |a, b| (0..d).map(|i| sd[i * cols + a] * hs[i * cols + b]).sum());
    let sg: Vec<f64> = (0..cols).map(|c| (0..d).map(|i| sd[i * cols + c] * g[i]).sum()).collect();
    let mut model = shs.clone();
    model.scale(l_hat);
    let rhs: Vec<f64> = sg.iter().map(|v| -v).collect();
    let lam = cholesky_solve(&model, &rhs)?;
    let subspace_direction: Vec<f64> = (0..d).map(|i| (0..cols).map(|c| sd[i * cols + c] * lam[c]).sum()).collect();

    // (1/L) S (S^T H S)^+ S^T H n with n = -H^+ g, all dense.
    let minus_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let newton = pseudo_solve(&h, &minus_g, DEFAULT_RANK_TOL)?;
    let h_newton = h.mul_vec(&newton);
    let st_hn: Vec<f64> = (0..cols).map(|c| (0..d).map(|i| sd[i * cols + c] * h_newton[i]).sum()).collect();
    let inner = pseudo_solve(&shs, &st_hn, DEFAULT_RANK_TOL)?;
    let projected_newton_direction: Vec<f64> = (0..d)
        .map(|i| (0..cols).map(|c| sd[i * cols + c] * inner[c]).sum::<f64>() / l_hat)
        .collect();

    let step = &algorithm_direction;
    let model_decrease = dot(g, step) + 0.5 * l_hat * h.quadratic_form(step);
    let predicted_decrease = -0.5 / l_hat * dot(&sg, &pseudo_solve(&shs, &sg, DEFAULT_RANK_TOL)?);
    Ok(FormulationCheck {
        algorithm_direction,
        subspace_direction,
        projected_newton_direction,
        model_decrease,
        predicted_decrease,
    })
}

/// Solves `M v = b` for symmetric positive definite `M` by Cholesky factorization.
fn cholesky_solve(m: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.order();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::Degenerate("sketched Hessian is not positive definite".into()));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut v = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * v[k]).sum();
        v[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(v)
}
