//! Randomized subspace Newton methods for generalized linear models.
//!
//! Each iteration samples a sketching matrix `S`, solves the small system
//! `(S^T H S) lam = -S^T g` in the least-norm sense and moves along `S lam`,
//! either with the fixed relative step `1/L_hat` or with an exact line search.
//! Gradient descent, accelerated gradient descent and full Newton are provided
//! as baselines, and [`diagnostics`] checks the convergence theory on small
//! instances.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod sketch;
pub mod solver;

pub use error::{Error, Result};
pub use glm::{GlmObjective, Link, RelativeConstants};
pub use io::Dataset;
pub use linalg::{SparseColumnMatrix, SymMatrix};
pub use sketch::{SketchDistribution, SketchKind, SketchMatrix};
pub use solver::{IterationRecord, Method, RunOutcome, SolverConfig, SolverState, StepMode};
