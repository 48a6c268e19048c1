//! Iterative methods over a [`GlmObjective`]: randomized subspace Newton
//! (fixed relative step or exact line search), full Newton, gradient descent
//! and accelerated gradient descent.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::glm::{GlmObjective, RelativeConstants};
use crate::linalg::{self, dot, norm, pseudo_solve, DEFAULT_RANK_TOL};
use crate::sketch::{SketchDistribution, SketchMatrix};

/// Slack on the descent check, relative to `1 + |f|`.
pub const ASCENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rsn,
    RsnLs,
    Newton,
    Gd,
    Agd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rsn, Method::RsnLs, Method::Newton, Method::Gd, Method::Agd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rsn => "rsn",
            Method::RsnLs => "rsn-ls",
            Method::Newton => "newton",
            Method::Gd => "gd",
            Method::Agd => "agd",
        }
    }

    pub fn uses_sketch(self) -> bool {
        matches!(self, Method::Rsn | Method::RsnLs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// Step `1/L_hat` (RSN, Newton) or `1/L` (GD, AGD).
    FixedRelative,
    /// Exact line search along the method's direction.
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    /// Tolerance on `|l(t)|`; `None` uses `1e-10 * (1 + |l(0)|)`.
    pub epsilon: Option<f64>,
    pub max_expand: usize,
    pub max_bisect: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_expand: 80,
            max_bisect: 200,
        }
    }
}

impl LineSearchParams {
    pub fn epsilon_for(&self, l0: f64) -> f64 {
        self.epsilon.unwrap_or(1e-10 * (1.0 + l0.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub step_mode: StepMode,
    pub tol: f64,
    pub max_iter: usize,
    pub line_search: LineSearchParams,
    /// Seeds the power iteration behind the relative constants.
    pub seed: u64,
    pub rank_tol: f64,
    /// Overrides the closed-form constants (tests, fault injection).
    pub constants: Option<RelativeConstants>,
    /// When false the trace reports zero wall-clock time, making it reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Rsn,
            step_mode: StepMode::FixedRelative,
            tol: 1e-6,
            max_iter: 1000,
            line_search: LineSearchParams::default(),
            seed: 0,
            rank_tol: DEFAULT_RANK_TOL,
            constants: None,
            record_wall_clock: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
        }
        if let Some(eps) = self.line_search.epsilon {
            if !(eps > 0.0) {
                return Err(Error::InvalidConfig(format!("line-search epsilon must be > 0, got {eps}")));
            }
        }
        if !(self.rank_tol >= 0.0) {
            return Err(Error::InvalidConfig("rank_tol must be >= 0".into()));
        }
        Ok(())
    }

    /// Whether this configuration takes line-search steps.
    pub fn line_search_enabled(&self) -> bool {
        self.method == Method::RsnLs || (self.step_mode == StepMode::LineSearch && self.method != Method::Agd)
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub k: usize,
    pub f: f64,
    pub g: Vec<f64>,
    margins: Vec<f64>,
    /// Step length and sketch size of the step that produced this state.
    pub step_size: f64,
    pub sketch_size: usize,
}

impl SolverState {
    pub fn new(obj: &GlmObjective, x0: Vec<f64>) -> Result<Self> {
        let eval = obj.evaluate(&x0)?;
        if !eval.value.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        Ok(Self {
            x: x0,
            k: 0,
            f: eval.value,
            g: eval.gradient,
            margins: eval.margins,
            step_size: 0.0,
            sketch_size: 0,
        })
    }

    pub fn grad_norm(&self) -> f64 {
        norm(&self.g)
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    fn advance(&self, obj: &GlmObjective, x: Vec<f64>, step_size: f64, sketch_size: usize) -> Result<Self> {
        let mut next = Self::new(obj, x)?;
        next.k = self.k + 1;
        next.step_size = step_size;
        next.sketch_size = sketch_size;
        Ok(next)
    }

    fn unchanged(&self, sketch_size: usize) -> Self {
        let mut next = self.clone();
        next.k += 1;
        next.step_size = 0.0;
        next.sketch_size = sketch_size;
        next
    }

    fn check_descent(self, before: f64) -> Result<Self> {
        if self.f > before + ASCENT_TOLERANCE * (1.0 + before.abs()) {
            Err(Error::AscentDetected {
                before,
                after: self.f,
            })
        } else {
            Ok(self)
        }
    }
}

/// Unscaled sketched Newton direction `d = S lam`, `lam = -(S^T H S)^+ S^T g`.
#[derive(Debug, Clone)]
pub struct SketchedDirection {
    pub lam: Vec<f64>,
    pub direction: Vec<f64>,
    /// `S^T g`
    pub sketched_gradient: Vec<f64>,
    /// `A^T d`, used to evaluate the objective along the direction.
    pub data_direction: Vec<f64>,
    pub sketched_hessian: linalg::SymMatrix,
}

impl SketchedDirection {
    /// `l(0) = lam^T S^T g`
    pub fn slope(&self) -> f64 {
        dot(&self.lam, &self.sketched_gradient)
    }

    pub fn is_zero(&self) -> bool {
        self.lam.iter().all(|&v| v == 0.0)
    }
}

pub fn sketched_direction(
    state: &SolverState,
    obj: &GlmObjective,
    s: &SketchMatrix,
    rank_tol: f64,
) -> Result<SketchedDirection> {
    let sketched_gradient = s.transpose_vec(&state.g)?;
    let data = obj.sketch_data(s)?;
    let weights = obj.curvature_weights(&state.margins);
    let shs = obj.sketched_hessian_from(&data, &weights, s);
    let rhs: Vec<f64> = sketched_gradient.iter().map(|v| -v).collect();
    let lam = pseudo_solve(&shs, &rhs, rank_tol)?;
    let direction = s.expand(&lam)?;
    let data_direction = data.tr_mul(&lam, obj.samples());
    Ok(SketchedDirection {
        lam,
        direction,
        sketched_gradient,
        data_direction,
        sketched_hessian: shs,
    })
}

/// One RSN step with an explicit sketch: `x - (1/L_hat) S (S^T H S)^+ S^T g`.
pub fn rsn_step_with(
    state: &SolverState,
    obj: &GlmObjective,
    s: &SketchMatrix,
    l_hat: f64,
    rank_tol: f64,
) -> Result<SolverState> {
    if !(l_hat > 0.0) {
        return Err(Error::InvalidConfig(format!("L_hat must be > 0, got {l_hat}")));
    }
    let size = s.size();
    if state.g.iter().all(|&v| v == 0.0) {
        return Ok(state.unchanged(size));
    }
    let dir = sketched_direction(state, obj, s, rank_tol)?;
    if dir.sketched_gradient.iter().all(|&v| v == 0.0) || dir.is_zero() {
        return Ok(state.unchanged(size));
    }
    let gamma = 1.0 / l_hat;
    let mut x = state.x.clone();
    linalg::axpy(gamma, &dir.direction, &mut x);
    state.advance(obj, x, gamma, size)?.check_descent(state.f)
}

/// One RSN step with the `k`-th sketch of `dist`.
pub fn rsn_step(state: &SolverState, obj: &GlmObjective, dist: &SketchDistribution, l_hat: f64) -> Result<SolverState> {
    let s = dist.sample(state.k as u64);
    rsn_step_with(state, obj, &s, l_hat, DEFAULT_RANK_TOL)
}

/// Full Newton step `x - gamma H^+ g`.
pub fn newton_step(state: &SolverState, obj: &GlmObjective, gamma: f64) -> Result<SolverState> {
    rsn_step_with(state, obj, &SketchMatrix::identity(obj.dim()), 1.0 / gamma, DEFAULT_RANK_TOL)
}

/// Root of an increasing slope function `l` with `l(0) < 0`.
///
/// Phase one doubles the bracket `[a, b]`, starting from `[0, 1]`, while
/// `l(b) < -epsilon`; phase two bisects until `|l(t)| <= epsilon`.
pub fn line_search(
    mut l: impl FnMut(f64) -> f64,
    l0: f64,
    epsilon: f64,
    max_expand: usize,
    max_bisect: usize,
) -> Result<f64> {
    if !(l0 < 0.0) {
        return Err(Error::NotDescent(l0));
    }
    let mut a = 0.0;
    let mut b = 1.0;
    let mut lb = l(b);
    let mut expansions = 0;
    while lb < -epsilon {
        if expansions == max_expand {
            return Err(Error::Unbounded(b));
        }
        a = b;
        b *= 2.0;
        lb = l(b);
        expansions += 1;
    }

    let mut t = b;
    let mut lt = lb;
    let mut bisections = 0;
    while !(lt.abs() <= epsilon) {
        // NaN means the trial overshot into overflow; shrink from above.
        if lt < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let mid = 0.5 * (a + b);
        if bisections == max_bisect || mid <= a || mid >= b {
            return Err(Error::LineSearchExhausted {
                lo: a,
                hi: b,
                residual: lt.abs(),
            });
        }
        t = mid;
        lt = l(t);
        bisections += 1;
    }
    Ok(t)
}

/// Exact line search from `state` along `direction`, given `w = A^T direction`.
fn line_search_along(
    state: &SolverState,
    obj: &GlmObjective,
    direction: &[f64],
    data_direction: &[f64],
    l0: f64,
    params: &LineSearchParams,
) -> Result<f64> {
    let slope = obj.directional_slope(&state.margins, data_direction, dot(&state.x, direction), dot(direction, direction));
    line_search(slope, l0, params.epsilon_for(l0), params.max_expand, params.max_bisect)
}

/// RSN with exact line search: `x + t d` with `d = S lam` and `t` a root of `l(t) = d^T g(x + t d)`.
pub fn rsn_ls_step_with(
    state: &SolverState,
    obj: &GlmObjective,
    s: &SketchMatrix,
    params: &LineSearchParams,
    rank_tol: f64,
) -> Result<SolverState> {
    let size = s.size();
    if state.g.iter().all(|&v| v == 0.0) {
        return Ok(state.unchanged(size));
    }
    let dir = sketched_direction(state, obj, s, rank_tol)?;
    let l0 = dir.slope();
    if dir.is_zero() || l0 == 0.0 {
        return Ok(state.unchanged(size));
    }
    let t = line_search_along(state, obj, &dir.direction, &dir.data_direction, l0, params)?;
    let mut x = state.x.clone();
    linalg::axpy(t, &dir.direction, &mut x);
    state.advance(obj, x, t, size)?.check_descent(state.f)
}

pub fn rsn_ls_step(
    state: &SolverState,
    obj: &GlmObjective,
    dist: &SketchDistribution,
    params: &LineSearchParams,
) -> Result<SolverState> {
    let s = dist.sample(state.k as u64);
    rsn_ls_step_with(state, obj, &s, params, DEFAULT_RANK_TOL)
}

/// `x - (1/L) g`
pub fn gd_step(state: &SolverState, obj: &GlmObjective, l_smooth: f64) -> Result<SolverState> {
    if state.g.iter().all(|&v| v == 0.0) {
        return Ok(state.unchanged(0));
    }
    let gamma = 1.0 / l_smooth;
    let mut x = state.x.clone();
    linalg::axpy(-gamma, &state.g, &mut x);
    state.advance(obj, x, gamma, 0)?.check_descent(state.f)
}

/// Gradient step with exact line search along `-g`.
pub fn gd_ls_step(state: &SolverState, obj: &GlmObjective, params: &LineSearchParams) -> Result<SolverState> {
    if state.g.iter().all(|&v| v == 0.0) {
        return Ok(state.unchanged(0));
    }
    let direction: Vec<f64> = state.g.iter().map(|v| -v).collect();
    let w = obj.data().tr_mul_vec(&direction);
    let l0 = -dot(&state.g, &state.g);
    let t = line_search_along(state, obj, &direction, &w, l0, params)?;
    let mut x = state.x.clone();
    linalg::axpy(t, &direction, &mut x);
    state.advance(obj, x, t, 0)?.check_descent(state.f)
}

/// Newton direction `-H^+ g` followed by an exact line search.
pub fn newton_ls_step(state: &SolverState, obj: &GlmObjective, params: &LineSearchParams) -> Result<SolverState> {
    rsn_ls_step_with(state, obj, &SketchMatrix::identity(obj.dim()), params, DEFAULT_RANK_TOL)
}

/// Momentum state for Nesterov's method.
///
/// With a strong-convexity modulus `mu > 0` the momentum is the constant
/// `(1 - sqrt(mu/L)) / (1 + sqrt(mu/L))`; otherwise the `t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2`
/// schedule is used.
#[derive(Debug, Clone)]
pub struct AgdMomentum {
    previous: Vec<f64>,
    t: f64,
    constant: Option<f64>,
}

impl AgdMomentum {
    pub fn new(x0: &[f64], l_smooth: f64, mu: f64) -> Self {
        let constant = (mu > 0.0).then(|| {
            let q = (mu / l_smooth).min(1.0).sqrt();
            (1.0 - q) / (1.0 + q)
        });
        Self {
            previous: x0.to_vec(),
            t: 1.0,
            constant,
        }
    }

    fn next_beta(&mut self) -> f64 {
        match self.constant {
            Some(beta) => beta,
            None => {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * self.t * self.t).sqrt());
                let beta = (self.t - 1.0) / t_next;
                self.t = t_next;
                beta
            }
        }
    }
}

/// `y = x + beta (x - x_prev)`, then `x+ = y - (1/L) g(y)`. Not a descent method.
pub fn agd_step(state: &SolverState, obj: &GlmObjective, momentum: &mut AgdMomentum, l_smooth: f64) -> Result<SolverState> {
    let beta = momentum.next_beta();
    let y: Vec<f64> = state
        .x
        .iter()
        .zip(&momentum.previous)
        .map(|(x, p)| x + beta * (x - p))
        .collect();
    let gy = obj.gradient(&y)?;
    let gamma = 1.0 / l_smooth;
    let mut x = y;
    linalg::axpy(-gamma, &gy, &mut x);
    momentum.previous = state.x.clone();
    state.advance(obj, x, gamma, 0)
}

/// One row of the iteration trace, describing the iterate after step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    pub sketch_size: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SolverState,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

/// Runs until `|g| <= tol` or `max_iter` steps.
pub fn run(config: &SolverConfig, obj: &GlmObjective, dist: &SketchDistribution, x0: Vec<f64>) -> Result<RunOutcome> {
    run_observed(config, obj, dist, x0, |_| {})
}

/// [`run`], calling `observe` on the initial state and after every step.
pub fn run_observed(
    config: &SolverConfig,
    obj: &GlmObjective,
    dist: &SketchDistribution,
    x0: Vec<f64>,
    mut observe: impl FnMut(&SolverState),
) -> Result<RunOutcome> {
    config.validate()?;
    if config.method.uses_sketch() && dist.dim() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            found: dist.dim(),
        });
    }
    let line_search = config.line_search_enabled();
    let needs_constants = !line_search || config.method == Method::Agd;
    let constants = match (config.constants, needs_constants) {
        (Some(c), _) => Some(c),
        (None, true) => Some(obj.relative_constants(config.seed)?),
        (None, false) => None,
    };
    let l_smooth = constants.map(|c| obj.smoothness_constant(c.sigma_max_sq));

    let mut state = SolverState::new(obj, x0)?;
    observe(&state);
    let mut momentum = match config.method {
        Method::Agd => Some(AgdMomentum::new(&state.x, l_smooth.unwrap_or(1.0), obj.reg())),
        _ => None,
    };

    let started = Instant::now();
    let mut trace = Vec::new();
    let mut converged = state.grad_norm() <= config.tol;
    while !converged && state.k < config.max_iter {
        let k = state.k;
        let ls = &config.line_search;
        let next = match (config.method, line_search) {
            (Method::Rsn | Method::RsnLs, true) => {
                let s = dist.sample(k as u64);
                rsn_ls_step_with(&state, obj, &s, ls, config.rank_tol)
            }
            (Method::Rsn | Method::RsnLs, false) => {
                let s = dist.sample(k as u64);
                rsn_step_with(&state, obj, &s, constants.unwrap().l_hat, config.rank_tol)
            }
            (Method::Newton, true) => newton_ls_step(&state, obj, ls),
            (Method::Newton, false) => newton_step(&state, obj, 1.0 / constants.unwrap().l_hat),
            (Method::Gd, true) => gd_ls_step(&state, obj, ls),
            (Method::Gd, false) => gd_step(&state, obj, l_smooth.unwrap()),
            (Method::Agd, _) => agd_step(&state, obj, momentum.as_mut().unwrap(), l_smooth.unwrap()),
        };
        state = next.map_err(|e| e.at_iteration(k))?;
        observe(&state);
        converged = state.grad_norm() <= config.tol;
        trace.push(IterationRecord {
            k: state.k,
            f: state.f,
            grad_norm: state.grad_norm(),
            step_size: state.step_size,
            sketch_size: state.sketch_size,
            wall_clock_seconds: if config.record_wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(RunOutcome {
        state,
        trace,
        converged,
    })
}
