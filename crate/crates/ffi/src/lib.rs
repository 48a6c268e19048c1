//! C interface to the subspace Newton solvers.
//!
//! Problems are opaque handles created by `rsn_problem_from_libsvm` or
//! `rsn_problem_from_csc` and released with `rsn_problem_free`. Every fallible
//! call returns an `RSN_*` status code; on failure a description is available
//! from `rsn_last_error` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use subspace_newton::{io, solver, Error, GlmObjective, Link, Method, SketchDistribution, SolverConfig, SparseColumnMatrix, StepMode};

pub const RSN_OK: i32 = 0;
pub const RSN_ERR_NULL_POINTER: i32 = 1;
pub const RSN_ERR_INVALID_ARGUMENT: i32 = 2;
pub const RSN_ERR_IO: i32 = 3;
pub const RSN_ERR_PARSE: i32 = 4;
pub const RSN_ERR_NUMERIC: i32 = 5;
pub const RSN_ERR_PANIC: i32 = 6;

pub const RSN_LINK_LOGISTIC: i32 = 0;
pub const RSN_LINK_SQUARED: i32 = 1;

pub const RSN_METHOD_RSN: i32 = 0;
pub const RSN_METHOD_RSN_LS: i32 = 1;
pub const RSN_METHOD_NEWTON: i32 = 2;
pub const RSN_METHOD_GD: i32 = 3;
pub const RSN_METHOD_AGD: i32 = 4;

pub const RSN_SKETCH_IDENTITY: i32 = 0;
pub const RSN_SKETCH_BLOCK: i32 = 1;
pub const RSN_SKETCH_UNIFORM: i32 = 2;
pub const RSN_SKETCH_GAUSSIAN: i32 = 3;
pub const RSN_SKETCH_WEIGHTED: i32 = 4;

/// Opaque problem handle.
pub struct RsnProblem {
    objective: GlmObjective,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RsnOptions {
    /// One of the `RSN_METHOD_*` constants.
    pub method: i32,
    /// One of the `RSN_SKETCH_*` constants.
    pub sketch: i32,
    /// Columns per sketch for block and Gaussian sketches.
    pub sketch_size: usize,
    /// Nonzero for exact line search.
    pub line_search: i32,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RsnReport {
    pub iterations: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// 1 if the gradient tolerance was met.
    pub converged: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) => RSN_ERR_IO,
        Error::Parse { .. } | Error::NonMonotoneIndex { .. } | Error::Csv(_) | Error::SchemaMismatch(_) => RSN_ERR_PARSE,
        Error::NonFinite(_)
        | Error::NoConvergence(_)
        | Error::NotPsd { .. }
        | Error::AscentDetected { .. }
        | Error::NotDescent(_)
        | Error::Unbounded(_)
        | Error::LineSearchExhausted { .. }
        | Error::Degenerate(_)
        | Error::ZeroMatrix => RSN_ERR_NUMERIC,
        Error::AtIteration { source, .. } => code_for(source),
        _ => RSN_ERR_INVALID_ARGUMENT,
    }
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RSN_OK,
        Ok(Err((code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic".into());
            RSN_ERR_PANIC
        }
    }
}

fn lib_err(e: Error) -> (i32, String) {
    (code_for(&e), e.to_string())
}

fn null_err(what: &str) -> (i32, String) {
    (RSN_ERR_NULL_POINTER, format!("{what} is null"))
}

fn link_from(code: i32) -> Result<Link, (i32, String)> {
    match code {
        RSN_LINK_LOGISTIC => Ok(Link::Logistic),
        RSN_LINK_SQUARED => Ok(Link::Squared),
        _ => Err((RSN_ERR_INVALID_ARGUMENT, format!("unknown link {code}"))),
    }
}

/// Message for the most recent failure on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rsn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rsn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a LIBSVM file, keeps the first `samples` samples (0 keeps all),
/// removes all-zero features and appends an intercept.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsn_problem_from_libsvm(
    path: *const c_char,
    samples: usize,
    link: i32,
    lambda: f64,
    out: *mut *mut RsnProblem,
) -> i32 {
    guard(|| {
        if path.is_null() {
            return Err(null_err("path"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let link = link_from(link)?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RSN_ERR_INVALID_ARGUMENT, "path is not UTF-8".to_string()))?;
        let mut raw = io::read_libsvm_file(Path::new(path)).map_err(lib_err)?;
        if samples > 0 {
            raw = raw.head(samples).map_err(lib_err)?;
        }
        let ds = io::preprocess(&raw).map_err(lib_err)?;
        let objective = GlmObjective::new(ds.data, ds.targets, lambda, link).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RsnProblem { objective }));
        Ok(())
    })
}

/// Builds a problem from a `rows x cols` column-compressed matrix with one
/// column per sample. No preprocessing is applied.
///
/// # Safety
/// `col_ptr` must hold `cols + 1` entries, `row_idx` and `values` must hold
/// `col_ptr[cols]` entries, `targets` must hold `cols` entries and `out` must
/// be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn rsn_problem_from_csc(
    rows: usize,
    cols: usize,
    col_ptr: *const usize,
    row_idx: *const usize,
    values: *const f64,
    targets: *const f64,
    link: i32,
    lambda: f64,
    out: *mut *mut RsnProblem,
) -> i32 {
    guard(|| {
        if col_ptr.is_null() || targets.is_null() || out.is_null() {
            return Err(null_err("col_ptr, targets or out"));
        }
        let link = link_from(link)?;
        let col_ptr = slice::from_raw_parts(col_ptr, cols + 1).to_vec();
        let nnz = col_ptr[cols];
        let (row_idx, values) = if nnz == 0 {
            (Vec::new(), Vec::new())
        } else {
            if row_idx.is_null() || values.is_null() {
                return Err(null_err("row_idx or values"));
            }
            (
                slice::from_raw_parts(row_idx, nnz).to_vec(),
                slice::from_raw_parts(values, nnz).to_vec(),
            )
        };
        let targets = slice::from_raw_parts(targets, cols).to_vec();
        let data = SparseColumnMatrix::new(rows, cols, col_ptr, row_idx, values).map_err(lib_err)?;
        let objective = GlmObjective::new(data, targets, lambda, link).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RsnProblem { objective }));
        Ok(())
    })
}

/// Releases a problem. NULL is ignored.
///
/// # Safety
/// `problem` must come from one of the constructors and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rsn_problem_free(problem: *mut RsnProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of features after preprocessing, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rsn_problem_dim(problem: *const RsnProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.objective.dim())
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rsn_problem_samples(problem: *const RsnProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.objective.samples())
}

unsafe fn point<'a>(problem: *const RsnProblem, x: *const f64, len: usize) -> Result<(&'a RsnProblem, &'a [f64]), (i32, String)> {
    let p = problem.as_ref().ok_or_else(|| null_err("problem"))?;
    if x.is_null() {
        return Err(null_err("x"));
    }
    if len != p.objective.dim() {
        return Err((
            RSN_ERR_INVALID_ARGUMENT,
            format!("expected {} coordinates, got {len}", p.objective.dim()),
        ));
    }
    Ok((p, slice::from_raw_parts(x, len)))
}

/// Objective value at `x` (length `len`, equal to the problem dimension).
///
/// # Safety
/// `x` must hold `len` values and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsn_value(problem: *const RsnProblem, x: *const f64, len: usize, out: *mut f64) -> i32 {
    guard(|| {
        let (p, x) = point(problem, x, len)?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = p.objective.value(x).map_err(lib_err)?;
        Ok(())
    })
}

/// Gradient at `x`, written to `out` (both of length `len`).
///
/// # Safety
/// `x` and `out` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rsn_gradient(problem: *const RsnProblem, x: *const f64, len: usize, out: *mut f64) -> i32 {
    guard(|| {
        let (p, x) = point(problem, x, len)?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let g = p.objective.gradient(x).map_err(lib_err)?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(&g);
        Ok(())
    })
}

/// Defaults: RSN with single-coordinate blocks, fixed relative step,
/// `tol = 1e-6`, `max_iter = 1000`, seed 0.
#[no_mangle]
pub extern "C" fn rsn_options_default() -> RsnOptions {
    let c = SolverConfig::default();
    RsnOptions {
        method: RSN_METHOD_RSN,
        sketch: RSN_SKETCH_BLOCK,
        sketch_size: 1,
        line_search: 0,
        tol: c.tol,
        max_iter: c.max_iter,
        seed: c.seed,
    }
}

fn method_from(code: i32) -> Result<Method, (i32, String)> {
    Ok(match code {
        RSN_METHOD_RSN => Method::Rsn,
        RSN_METHOD_RSN_LS => Method::RsnLs,
        RSN_METHOD_NEWTON => Method::Newton,
        RSN_METHOD_GD => Method::Gd,
        RSN_METHOD_AGD => Method::Agd,
        _ => return Err((RSN_ERR_INVALID_ARGUMENT, format!("unknown method {code}"))),
    })
}

fn distribution_from(opts: &RsnOptions, obj: &GlmObjective) -> Result<SketchDistribution, (i32, String)> {
    let d = obj.dim();
    let dist = match opts.sketch {
        RSN_SKETCH_IDENTITY => Ok(SketchDistribution::identity(d)),
        RSN_SKETCH_BLOCK => SketchDistribution::coordinate_block(d, opts.sketch_size),
        RSN_SKETCH_UNIFORM => SketchDistribution::uniform_coordinate(d),
        RSN_SKETCH_GAUSSIAN => SketchDistribution::gaussian(d, opts.sketch_size),
        RSN_SKETCH_WEIGHTED => SketchDistribution::curvature_weighted(obj),
        other => return Err((RSN_ERR_INVALID_ARGUMENT, format!("unknown sketch {other}"))),
    };
    Ok(dist.map_err(lib_err)?.with_seed(opts.seed, 0))
}

/// Minimizes from the point in `x` (length `len`), overwriting it with the
/// final iterate. `report` may be NULL. Returns `RSN_OK` both when the
/// tolerance is met and when the iteration budget runs out; check
/// `report->converged`.
///
/// # Safety
/// `x` must hold `len` values; `options` must be valid; `report` must be NULL
/// or valid.
#[no_mangle]
pub unsafe extern "C" fn rsn_solve(
    problem: *const RsnProblem,
    options: *const RsnOptions,
    x: *mut f64,
    len: usize,
    report: *mut RsnReport,
) -> i32 {
    guard(|| {
        let (p, x0) = point(problem, x, len)?;
        let opts = options.as_ref().ok_or_else(|| null_err("options"))?;
        let config = SolverConfig {
            method: method_from(opts.method)?,
            step_mode: if opts.line_search != 0 {
                StepMode::LineSearch
            } else {
                StepMode::FixedRelative
            },
            tol: opts.tol,
            max_iter: opts.max_iter,
            seed: opts.seed,
            record_wall_clock: false,
            ..SolverConfig::default()
        };
        let dist = distribution_from(opts, &p.objective)?;
        let outcome = solver::run(&config, &p.objective, &dist, x0.to_vec()).map_err(lib_err)?;
        slice::from_raw_parts_mut(x, len).copy_from_slice(&outcome.state.x);
        if let Some(r) = report.as_mut() {
            *r = RsnReport {
                iterations: outcome.state.k,
                f: outcome.state.f,
                grad_norm: outcome.state.grad_norm(),
                converged: i32::from(outcome.converged),
            };
        }
        Ok(())
    })
}
