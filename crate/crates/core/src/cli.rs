//! The `rsn` command line: `solve`, `benchmark` and `diagnose`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diagnostics::{self, ProjectionMode};
use crate::error::{Error, Result};
use crate::glm::{GlmObjective, Link};
use crate::io;
use crate::sketch::{SketchDistribution, SketchMatrix};
use crate::solver::{self, Method, RunOutcome, SolverConfig, StepMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_AUDIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rsn", version, about = "Randomized subspace Newton solvers for generalized linear models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method on one dataset and write its trace.
    Solve(SolveArgs),
    /// Run several methods on one dataset into a shared directory with a manifest.
    Benchmark(BenchmarkArgs),
    /// Estimate rho, audit the relative constants and check the step formulations.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SketchChoice {
    Identity,
    /// Uniformly random coordinate blocks of size `--sketch-size`.
    Block,
    /// A single uniformly random coordinate.
    Uniform,
    /// Dense Gaussian with `--sketch-size` columns.
    Gaussian,
    /// Single coordinates drawn proportionally to the curvature upper bound.
    Weighted,
}

impl SketchChoice {
    fn name(self) -> &'static str {
        match self {
            SketchChoice::Identity => "identity",
            SketchChoice::Block => "block",
            SketchChoice::Uniform => "uniform",
            SketchChoice::Gaussian => "gaussian",
            SketchChoice::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkChoice {
    Logistic,
    Squared,
}

impl From<LinkChoice> for Link {
    fn from(l: LinkChoice) -> Self {
        match l {
            LinkChoice::Logistic => Link::Logistic,
            LinkChoice::Squared => Link::Squared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// LIBSVM file.
    #[arg(long)]
    pub data: PathBuf,
    /// Use only the first N samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value = "logistic")]
    pub link: LinkChoice,
    /// Ridge weight.
    #[arg(long, default_value_t = 1e-10)]
    pub lambda: f64,
    /// Output directory.
    #[arg(long, env = "RSN_OUT_DIR", default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Exact line search instead of the fixed relative step.
    #[arg(long)]
    pub line_search: bool,
    /// Record wall-clock time in the trace. `off` writes zeros, making traces reproducible byte for byte.
    #[arg(long, value_enum, default_value = "on")]
    pub wall_clock: Toggle,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "rsn")]
    pub method: String,
    #[arg(long, value_enum, default_value = "block")]
    pub sketch: SketchChoice,
    /// Sketch size: a number, `d`, or `d/N`.
    #[arg(long, default_value = "1")]
    pub sketch_size: String,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Comma-separated methods; sketched methods run once per sketch size.
    #[arg(long, default_value = "gd,agd,newton,rsn", value_delimiter = ',')]
    pub method: Vec<String>,
    #[arg(long, value_enum, default_value = "block")]
    pub sketch: SketchChoice,
    /// Comma-separated sketch sizes, each a number, `d`, or `d/N`.
    #[arg(long, default_value = "d/8,d/4", value_delimiter = ',')]
    pub sketch_size: Vec<String>,
    /// Run independent configurations concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "uniform")]
    pub sketch: SketchChoice,
    #[arg(long, default_value = "1")]
    pub sketch_size: String,
    /// Number of level-set pairs in the relative-constant audit.
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    /// Draws used when the sketch has no enumerable support.
    #[arg(long, default_value_t = 20_000)]
    pub mc_samples: usize,
    /// Multiplies the relative smoothness constant before auditing.
    #[arg(long, default_value_t = 1.0)]
    pub lhat_scale: f64,
    /// Number of random (point, sketch) pairs for the formulation check.
    #[arg(long, default_value_t = 20)]
    pub formulation_trials: usize,
    /// Allowed relative disagreement between step formulations.
    #[arg(long, default_value_t = 1e-8)]
    pub formulation_tol: f64,
}

/// Parses the arguments and runs the command, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            EXIT_ERROR
        }
    }
}

fn error_chain(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let _ = write!(msg, ": {s}");
        source = s.source();
    }
    msg
}

struct Problem {
    obj: GlmObjective,
    digest: String,
    raw_features: usize,
}

fn load_problem(args: &DataArgs) -> Result<Problem> {
    if !(args.lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("--lambda must be >= 0, got {}", args.lambda)));
    }
    let digest = io::file_digest(&args.data)?;
    let mut raw = io::read_libsvm_file(&args.data)?;
    if let Some(n) = args.samples {
        if n == 0 {
            return Err(Error::InvalidConfig("--samples must be >= 1".into()));
        }
        raw = raw.head(n)?;
    }
    let raw_features = raw.features();
    let ds = io::preprocess(&raw)?;
    let obj = GlmObjective::new(ds.data, ds.targets, args.lambda, args.link.into())?;
    Ok(Problem {
        obj,
        digest,
        raw_features,
    })
}

/// Resolves `12`, `d` or `d/4` against the problem dimension.
pub fn parse_sketch_size(token: &str, dim: usize) -> Result<usize> {
    let token = token.trim();
    let bad = || Error::InvalidConfig(format!("invalid sketch size '{token}'"));
    let size = if token == "d" {
        dim
    } else if let Some(div) = token.strip_prefix("d/") {
        let div: usize = div.parse().map_err(|_| bad())?;
        if div == 0 {
            return Err(bad());
        }
        (dim / div).max(1)
    } else {
        token.parse().map_err(|_| bad())?
    };
    if size == 0 || size > dim {
        return Err(Error::InvalidConfig(format!("sketch size must be in 1..={dim}, got {size}")));
    }
    Ok(size)
}

fn build_distribution(obj: &GlmObjective, choice: SketchChoice, size: usize) -> Result<SketchDistribution> {
    let d = obj.dim();
    match choice {
        SketchChoice::Identity => Ok(SketchDistribution::identity(d)),
        SketchChoice::Block => SketchDistribution::coordinate_block(d, size),
        SketchChoice::Uniform => SketchDistribution::uniform_coordinate(d),
        SketchChoice::Gaussian => SketchDistribution::gaussian(d, size),
        SketchChoice::Weighted => SketchDistribution::curvature_weighted(obj),
    }
}

fn stream_for(name: &str) -> u64 {
    let digest = io::sha256_hex(name.as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

#[derive(Debug, Clone)]
struct RunSpec {
    name: String,
    method: Method,
    sketch: SketchChoice,
    sketch_size: usize,
}

fn run_name(method: Method, sketch: SketchChoice, size: usize, dim: usize) -> String {
    if !method.uses_sketch() {
        return method.name().to_string();
    }
    match sketch {
        SketchChoice::Block if size == dim => format!("{}-block-d", method.name()),
        SketchChoice::Block | SketchChoice::Gaussian => format!("{}-{}-s{size}", method.name(), sketch.name()),
        _ => format!("{}-{}", method.name(), sketch.name()),
    }
}

fn solver_config(method: Method, args: &SolverArgs, seed: u64) -> SolverConfig {
    SolverConfig {
        method,
        step_mode: if args.line_search {
            StepMode::LineSearch
        } else {
            StepMode::FixedRelative
        },
        tol: args.tol,
        max_iter: args.max_iter,
        seed,
        record_wall_clock: args.wall_clock == Toggle::On,
        ..SolverConfig::default()
    }
}

fn execute(spec: &RunSpec, problem: &Problem, args: &SolverArgs, data: &DataArgs) -> Result<(RunOutcome, SketchDistribution)> {
    let config = solver_config(spec.method, args, data.seed);
    config.validate()?;
    let dist = build_distribution(&problem.obj, spec.sketch, spec.sketch_size)?.with_seed(data.seed, stream_for(&spec.name));
    let x0 = vec![0.0; problem.obj.dim()];
    let outcome = solver::run(&config, &problem.obj, &dist, x0)?;
    Ok((outcome, dist))
}

fn metadata(spec: &RunSpec, problem: &Problem, args: &SolverArgs, data: &DataArgs, dist: &SketchDistribution, outcome: &RunOutcome) -> Vec<(String, String)> {
    let kv = |k: &str, v: String| (k.to_string(), v);
    vec![
        kv("run", spec.name.clone()),
        kv("method", spec.method.name().into()),
        kv("sketch", spec.sketch.name().into()),
        kv("sketch_size", spec.sketch_size.to_string()),
        kv("line_search", args.line_search.to_string()),
        kv("link", format!("{:?}", data.link).to_lowercase()),
        kv("lambda", format!("{:e}", data.lambda)),
        kv("tol", format!("{:e}", args.tol)),
        kv("max_iter", args.max_iter.to_string()),
        kv("seed", data.seed.to_string()),
        kv("stream", dist.stream().to_string()),
        kv("dataset", data.data.display().to_string()),
        kv("dataset_sha256", problem.digest.clone()),
        kv("samples", problem.obj.samples().to_string()),
        kv("raw_features", problem.raw_features.to_string()),
        kv("dimension", problem.obj.dim().to_string()),
        kv("wall_clock", (args.wall_clock == Toggle::On).to_string()),
        kv("converged", outcome.converged.to_string()),
        kv("iterations", outcome.state.k.to_string()),
        kv("final_f", format!("{:.16e}", outcome.state.f)),
        kv("final_grad_norm", format!("{:.16e}", outcome.state.grad_norm())),
    ]
}

fn write_run(dir: &Path, spec: &RunSpec, outcome: &RunOutcome, meta: &[(String, String)]) -> Result<PathBuf> {
    let trace = dir.join(format!("{}.csv", spec.name));
    io::write_trace_file(&trace, &outcome.trace)?;
    io::write_key_values_file(&dir.join(format!("{}.meta", spec.name)), meta)?;
    Ok(trace)
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let method: Method = args.method.parse()?;
    let problem = load_problem(&args.data)?;
    let size = parse_sketch_size(&args.sketch_size, problem.obj.dim())?;
    let spec = RunSpec {
        name: run_name(method, args.sketch, size, problem.obj.dim()),
        method,
        sketch: args.sketch,
        sketch_size: size,
    };
    let (outcome, dist) = execute(&spec, &problem, &args.solver, &args.data)?;
    fs::create_dir_all(&args.data.out)?;
    let meta = metadata(&spec, &problem, &args.solver, &args.data, &dist, &outcome);
    let trace = write_run(&args.data.out, &spec, &outcome, &meta)?;
    println!(
        "k={} f={:.16e} grad_norm={:.6e} converged={} trace={}",
        outcome.state.k,
        outcome.state.f,
        outcome.state.grad_norm(),
        outcome.converged,
        trace.display()
    );
    Ok(if outcome.converged { EXIT_OK } else { EXIT_MAX_ITER })
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<i32> {
    let methods: Vec<Method> = args.method.iter().map(|m| m.trim().parse()).collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods given".into()));
    }
    let problem = load_problem(&args.data)?;
    let d = problem.obj.dim();
    let sizes: Vec<usize> = args
        .sketch_size
        .iter()
        .map(|t| parse_sketch_size(t, d))
        .collect::<Result<_>>()?;
    let mut specs = Vec::new();
    for &method in &methods {
        if method.uses_sketch() && matches!(args.sketch, SketchChoice::Block | SketchChoice::Gaussian) {
            for &size in &sizes {
                specs.push(RunSpec {
                    name: run_name(method, args.sketch, size, d),
                    method,
                    sketch: args.sketch,
                    sketch_size: size,
                });
            }
        } else {
            specs.push(RunSpec {
                name: run_name(method, args.sketch, 1, d),
                method,
                sketch: args.sketch,
                sketch_size: 1,
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    specs.retain(|s| seen.insert(s.name.clone()));
    args.solver_config_check()?;
    fs::create_dir_all(&args.data.out)?;

    let run_one = |spec: &RunSpec| -> std::result::Result<(RunOutcome, String), String> {
        let (outcome, dist) = execute(spec, &problem, &args.solver, &args.data).map_err(|e| error_chain(&e))?;
        let meta = metadata(spec, &problem, &args.solver, &args.data, &dist, &outcome);
        let path = write_run(&args.data.out, spec, &outcome, &meta).map_err(|e| error_chain(&e))?;
        let digest = io::file_digest(&path).map_err(|e| error_chain(&e))?;
        Ok((outcome, digest))
    };
    let results: Vec<std::result::Result<(RunOutcome, String), String>> = if args.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = specs.iter().map(|spec| scope.spawn(|| run_one(spec))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("run panicked".into())))
                .collect()
        })
    } else {
        specs.iter().map(run_one).collect()
    };

    let kv = |k: String, v: String| (k, v);
    let mut manifest = vec![
        kv("dataset".into(), args.data.data.display().to_string()),
        kv("dataset_sha256".into(), problem.digest.clone()),
        kv("samples".into(), problem.obj.samples().to_string()),
        kv("dimension".into(), d.to_string()),
        kv("link".into(), format!("{:?}", args.data.link).to_lowercase()),
        kv("lambda".into(), format!("{:e}", args.data.lambda)),
        kv("tol".into(), format!("{:e}", args.solver.tol)),
        kv("max_iter".into(), args.solver.max_iter.to_string()),
        kv("line_search".into(), args.solver.line_search.to_string()),
        kv("seed".into(), args.data.seed.to_string()),
        kv("wall_clock".into(), (args.solver.wall_clock == Toggle::On).to_string()),
        kv("runs".into(), specs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(",")),
    ];
    let mut any_error = false;
    let mut all_converged = true;
    for (spec, result) in specs.iter().zip(&results) {
        let prefix = format!("run.{}", spec.name);
        match result {
            Ok((outcome, digest)) => {
                let status = if outcome.converged { "converged" } else { "max_iter" };
                all_converged &= outcome.converged;
                manifest.push(kv(format!("{prefix}.status"), status.into()));
                manifest.push(kv(format!("{prefix}.trace"), format!("{}.csv", spec.name)));
                manifest.push(kv(format!("{prefix}.iterations"), outcome.state.k.to_string()));
                manifest.push(kv(format!("{prefix}.sha256"), digest.clone()));
                println!(
                    "{:<24} {:<9} k={:<6} f={:.10e} grad_norm={:.3e}",
                    spec.name,
                    status,
                    outcome.state.k,
                    outcome.state.f,
                    outcome.state.grad_norm()
                );
            }
            Err(msg) => {
                any_error = true;
                manifest.push(kv(format!("{prefix}.status"), "error".into()));
                manifest.push(kv(format!("{prefix}.error"), msg.replace('\n', " ")));
                eprintln!("{}: error: {msg}", spec.name);
            }
        }
    }
    io::write_key_values_file(&args.data.out.join("manifest.txt"), &manifest)?;
    Ok(if any_error {
        EXIT_ERROR
    } else if all_converged {
        EXIT_OK
    } else {
        EXIT_MAX_ITER
    })
}

impl BenchmarkArgs {
    fn solver_config_check(&self) -> Result<()> {
        solver_config(Method::Rsn, &self.solver, self.data.seed).validate()
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(",")
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<i32> {
    let problem = load_problem(&args.data)?;
    let obj = &problem.obj;
    let d = obj.dim();
    if d > diagnostics::DIAGNOSTIC_DIM_CAP {
        return Err(Error::TooLarge {
            dim: d,
            cap: diagnostics::DIAGNOSTIC_DIM_CAP,
        });
    }
    if !(args.lhat_scale > 0.0) {
        return Err(Error::InvalidConfig("--lhat-scale must be > 0".into()));
    }
    let size = parse_sketch_size(&args.sketch_size, d)?;
    let seed = args.data.seed;
    let dist = build_distribution(obj, args.sketch, size)?.with_seed(seed, stream_for("diagnose"));
    let mut constants = obj.relative_constants(seed)?;
    constants.l_hat *= args.lhat_scale;

    let kv = |k: &str, v: String| (k.to_string(), v);
    let mut report = vec![
        kv("dataset", args.data.data.display().to_string()),
        kv("dataset_sha256", problem.digest.clone()),
        kv("dimension", d.to_string()),
        kv("samples", obj.samples().to_string()),
        kv("lambda", format!("{:e}", args.data.lambda)),
        kv("sketch", args.sketch.name().into()),
        kv("sketch_size", size.to_string()),
        kv("seed", seed.to_string()),
        kv("sigma_max_sq", format!("{:.16e}", constants.sigma_max_sq)),
        kv("l_hat", format!("{:.16e}", constants.l_hat)),
        kv("mu_hat", format!("{:.16e}", constants.mu_hat)),
        kv("lhat_scale", format!("{}", args.lhat_scale)),
    ];

    let x0 = vec![0.0; d];
    let mode = if dist.outcomes(100_000).is_some() {
        ProjectionMode::exact()
    } else {
        ProjectionMode::MonteCarlo {
            samples: args.mc_samples,
        }
    };
    let rho = diagnostics::rho_at(obj, &x0, &dist, mode)?;
    report.push(kv("rho", format!("{:.16e}", rho.value)));
    report.push(kv("rho.method", format!("{:?}", rho.method)));
    report.push(kv("rho.samples", rho.samples.to_string()));
    report.push(kv("rho.std_error", format!("{:e}", rho.std_error)));
    report.push(kv("rho.exactness", format!("{:?}", rho.exactness)));
    report.push(kv("rate.theoretical_factor", format!("{:.16e}", 1.0 - rho.value * constants.mu_hat / constants.l_hat)));

    let mut passed = true;
    match diagnostics::verify_relative_constants(obj, &constants, &x0, args.pairs, seed) {
        Ok(audit) => {
            report.push(kv("audit.status", "pass".into()));
            report.push(kv("audit.pairs", audit.pairs.to_string()));
            report.push(kv("audit.max_smoothness_excess", format!("{:e}", audit.max_smoothness_excess)));
            report.push(kv("audit.max_convexity_excess", format!("{:e}", audit.max_convexity_excess)));
            report.push(kv("audit.c_stability_ratio", format!("{:.16e}", audit.c_stability_ratio)));
        }
        Err(Error::ViolationFound(w)) => {
            passed = false;
            report.push(kv("audit.status", "violation".into()));
            report.push(kv("witness.inequality", format!("{:?}", w.inequality).to_lowercase()));
            report.push(kv("witness.excess", format!("{:e}", w.excess)));
            report.push(kv("witness.f_x", format!("{:.17e}", w.f_x)));
            report.push(kv("witness.model", format!("{:.17e}", w.model)));
            report.push(kv("witness.x", fmt_vec(&w.x)));
            report.push(kv("witness.y", fmt_vec(&w.y)));
        }
        Err(e) => return Err(e),
    }

    // Formulation check at level-set points with fresh sketches, using the unscaled constant.
    let l_hat = constants.l_hat / args.lhat_scale;
    let mut sampler = diagnostics::LevelSetSampler::new(obj, x0.clone(), seed ^ 0x5eed)?;
    let mut worst_direction = 0.0f64;
    let mut worst_decrease = 0.0f64;
    for trial in 0..args.formulation_trials {
        let x = if trial == 0 { x0.clone() } else { sampler.next_point()? };
        let s: SketchMatrix = dist.sample(trial as u64);
        let check = diagnostics::formulation_check(obj, &x, &s, l_hat)?;
        worst_direction = worst_direction.max(check.direction_disagreement());
        worst_decrease = worst_decrease.max(check.decrease_residual());
    }
    let formulation_ok = worst_direction <= args.formulation_tol && worst_decrease <= args.formulation_tol;
    passed &= formulation_ok;
    report.push(kv("formulation.trials", args.formulation_trials.to_string()));
    report.push(kv("formulation.max_direction_disagreement", format!("{worst_direction:e}")));
    report.push(kv("formulation.max_decrease_residual", format!("{worst_decrease:e}")));
    report.push(kv("formulation.status", if formulation_ok { "pass" } else { "fail" }.into()));
    report.push(kv("status", if passed { "pass" } else { "fail" }.into()));

    fs::create_dir_all(&args.data.out)?;
    let path = args.data.out.join("diagnose.txt");
    io::write_key_values_file(&path, &report)?;
    for (k, v) in &report {
        if !k.starts_with("witness.x") && !k.starts_with("witness.y") {
            println!("{k} = {v}");
        }
    }
    println!("report = {}", path.display());
    Ok(if passed { EXIT_OK } else { EXIT_AUDIT_FAILED })
}
