//! Command-line front end: TOML run configurations, the `solve`, `simulate`,
//! `sweep`, `classify` and `balls` subcommands, and CSV/JSON export.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{BuiltinSystem, ControlAffineSystem, CostParams, Trajectory};
use crate::error::Error;
use crate::grid::{RegularGrid, ScalarField, VectorField};
use crate::hjb::{
    default_active_tol, default_dt, simulate_closed_loop, solve, sparsity_metrics, SolveResult,
    SolverConfig, SolverMode, SparsityMetrics, DEFAULT_CONTROL_RESOLUTION, DEFAULT_EVAL_MAX_ITERS,
    DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::penalty::{
    brute_force_min, classify_indices, minimize_box, BoxConstraint, Constraint, PenaltyParams,
    PointwiseProblem,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Solver(e) => match e {
                Error::NotConverged { .. } | Error::Cycling { .. } | Error::Stalled { .. } => EXIT_NOT_CONVERGED,
                Error::Numeric { .. } => EXIT_NUMERIC,
                _ => EXIT_CONFIG,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Solver(e)
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sparse-hjb", version, about = "Sparse and switching infinite-horizon optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the HJB equation and export the value function, feedback and metrics.
    Solve(SolveArgs),
    /// Roll out the closed-loop feedback from an initial state.
    Simulate(SimulateArgs),
    /// Solve once per (p, q) pair and tabulate the sparsity metrics.
    Sweep(SweepArgs),
    /// Classify the coordinates of a pointwise problem and print its minimizer.
    Classify(ClassifyArgs),
    /// Sample `‖u‖_p^q` on [-1, 1]² for contour plots.
    Balls(BallsArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub tmax: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub q: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub phi: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rho: Vec<f64>,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub gamma_t: f64,
    /// Cross-check against a brute-force grid search.
    #[arg(long)]
    pub oracle: bool,
    /// Points per axis for the brute-force grid.
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct BallsArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub q: Vec<f64>,
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub domain: DomainSection,
    pub penalty: PenaltyParams,
    pub control: ControlSection,
    pub cost: CostSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub rho: Rho,
}

/// One bound shared by every coordinate, or one per coordinate.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Rho {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub mode: Option<SolverMode>,
    pub dt: Option<f64>,
    pub control_resolution: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub eval_max_iters: Option<usize>,
    pub active_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "default_sim_dt")]
    pub sim_dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub stop_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn default_sim_dt() -> f64 {
    0.01
}

fn default_t_max() -> f64 {
    20.0
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            sim_dt: default_sim_dt(),
            t_max: default_t_max(),
            stop_radius: 0.0,
            x0: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Builds every object the solvers need, filling in defaults.
    pub fn resolve(&self) -> CliResult<Problem> {
        let sys = build_system(&self.system)?;
        let grid = RegularGrid::new(
            self.domain.lower.clone(),
            self.domain.upper.clone(),
            self.domain.nodes.clone(),
        )?;
        let rho = match &self.control.rho {
            Rho::Uniform(r) => vec![*r; sys.control_dim()],
            Rho::PerAxis(v) => v.clone(),
        };
        let bounds = BoxConstraint::new(rho)?;
        let cost = CostParams::new(self.cost.target.clone(), self.penalty)?;
        Error::check_len("cost target", sys.state_dim(), cost.target.len())?;
        let dt = match self.solver.dt {
            Some(dt) => dt,
            None => default_dt(&sys, &grid, &bounds)?,
        };
        let s = &self.solver;
        let resolution = s.control_resolution.unwrap_or(DEFAULT_CONTROL_RESOLUTION);
        let solver = SolverConfig {
            dt,
            control_resolution: resolution,
            tol: s.tol.unwrap_or(DEFAULT_TOL),
            max_iters: s.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
            mode: s.mode.unwrap_or(SolverMode::PolicyIteration),
            active_tol: s.active_tol.unwrap_or_else(|| default_active_tol(&bounds, resolution)),
            eval_max_iters: s.eval_max_iters.unwrap_or(DEFAULT_EVAL_MAX_ITERS),
        };
        solver.validate()?;
        let sim = &self.simulate;
        if !(sim.sim_dt > 0.0 && sim.t_max >= 0.0 && sim.stop_radius >= 0.0) {
            return Err(CliError::Config(
                "simulate: need sim_dt > 0, t_max >= 0 and stop_radius >= 0".into(),
            ));
        }
        Ok(Problem {
            echo: EffectiveConfig {
                system: self.system.clone(),
                domain: self.domain.clone(),
                penalty: self.penalty,
                rho: bounds.rho().to_vec(),
                target: cost.target.clone(),
                solver: solver.clone(),
                simulate: self.simulate.clone(),
                output_dir: self.output_dir.clone(),
            },
            sys,
            grid,
            bounds,
            cost,
            solver,
        })
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("system.{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn build_system(s: &SystemSection) -> CliResult<ControlAffineSystem> {
    let builtin = match s.kind.as_str() {
        "linear" => {
            let (a, b) = match (&s.a, &s.b) {
                (Some(a), Some(b)) => (matrix(a, "a")?, matrix(b, "b")?),
                _ => return Err(CliError::Config("system kind 'linear' needs both a and b".into())),
            };
            BuiltinSystem::Linear { a, b }
        }
        "eikonal" => BuiltinSystem::Eikonal { dim: s.dim.unwrap_or(2) },
        other => {
            if s.dim.is_some() || s.a.is_some() || s.b.is_some() {
                return Err(CliError::Config(format!(
                    "system kind '{other}' takes no dim, a or b parameters"
                )));
            }
            BuiltinSystem::from_name(other)?
        }
    };
    Ok(builtin.build()?)
}

/// The configuration with every default made explicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveConfig {
    pub system: SystemSection,
    pub domain: DomainSection,
    pub penalty: PenaltyParams,
    pub rho: Vec<f64>,
    pub target: Vec<f64>,
    pub solver: SolverConfig,
    pub simulate: SimulateSection,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub sys: ControlAffineSystem,
    pub grid: RegularGrid,
    pub bounds: BoxConstraint,
    pub cost: CostParams,
    pub solver: SolverConfig,
    pub echo: EffectiveConfig,
}

impl Problem {
    pub fn solve(&self) -> crate::Result<SolveResult> {
        solve(
            &ScalarField::zeros(self.grid.clone()),
            &self.sys,
            &self.cost,
            &self.bounds,
            &self.solver,
        )
    }
}

// ---------------------------------------------------------------------------
// Output

#[derive(Debug, Serialize)]
pub struct SolveMetrics {
    pub converged: bool,
    pub mode: SolverMode,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub residuals: Vec<f64>,
    pub sparsity: Option<SparsityMetrics>,
    pub dt: f64,
    pub discount: f64,
    pub nodes: usize,
    pub error: Option<String>,
    pub wall_time_seconds: f64,
    pub config: EffectiveConfig,
}

/// Scientific notation with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn write_value_csv(path: &Path, v: &ScalarField) -> CliResult<()> {
    let g = v.grid();
    let header = numbered("x", g.dim()).chain(["V".to_string()]).collect();
    let rows = g.node_iter().map(|(i, x)| {
        x.iter()
            .chain([&v.values()[i]])
            .map(|c| fmt_f64(*c))
            .collect()
    });
    write_rows(path, header, rows)
}

pub fn write_feedback_csv(path: &Path, fb: &VectorField, active_tol: f64) -> CliResult<()> {
    let g = fb.grid();
    let header = numbered("x", g.dim())
        .chain(numbered("u", fb.dim()))
        .chain(["n_active".to_string()])
        .collect();
    let rows = g.node_iter().map(|(i, x)| {
        let u = fb.get(i);
        let active = u.iter().filter(|c| c.abs() > active_tol).count();
        x.iter()
            .chain(u)
            .map(|c| fmt_f64(*c))
            .chain([active.to_string()])
            .collect()
    });
    write_rows(path, header, rows)
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> CliResult<()> {
    let d = traj.states.first().map(Vec::len).unwrap_or(0);
    let m = traj.controls.first().map(Vec::len).unwrap_or(0);
    let header = ["t".to_string()]
        .into_iter()
        .chain(numbered("x", d))
        .chain(numbered("u", m))
        .chain(["running_cost".to_string(), "discounted_cumcost".to_string()])
        .collect();
    let rows = (0..traj.len()).map(|k| {
        [traj.times[k]]
            .iter()
            .chain(&traj.states[k])
            .chain(&traj.controls[k])
            .chain([&traj.running_costs[k], &traj.cumulative_cost[k]])
            .map(|c| fmt_f64(*c))
            .collect()
    });
    write_rows(path, header, rows)
}

/// Reads a `value.csv` back, returning `None` if its nodes differ from `grid`.
pub fn read_value_csv(path: &Path, grid: &RegularGrid) -> CliResult<Option<ScalarField>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let d = grid.dim();
    let mut values = Vec::with_capacity(grid.len());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        if rec.len() != d + 1 || i >= grid.len() {
            return Ok(None);
        }
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| io_err(path, e))?;
        if nums[..d] != grid.node_coords(i)[..] {
            return Ok(None);
        }
        values.push(nums[d]);
    }
    if values.len() != grid.len() {
        return Ok(None);
    }
    Ok(Some(ScalarField::new(grid.clone(), values)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

// ---------------------------------------------------------------------------
// Commands

/// Solves `problem`, writing `value.csv`, `feedback.csv` and `metrics.json`
/// into `out`. On solver failure the metrics are still written.
pub fn solve_into(problem: &Problem, out: &Path) -> CliResult<SolveResult> {
    ensure_dir(out)?;
    let start = Instant::now();
    let result = problem.solve();
    let wall = start.elapsed().as_secs_f64();
    let beta = (-problem.cost.penalty.lambda * problem.solver.dt).exp();
    let mut metrics = SolveMetrics {
        converged: false,
        mode: problem.solver.mode,
        iterations: 0,
        inner_iterations: 0,
        residuals: Vec::new(),
        sparsity: None,
        dt: problem.solver.dt,
        discount: beta,
        nodes: problem.grid.len(),
        error: None,
        wall_time_seconds: wall,
        config: problem.echo.clone(),
    };
    match result {
        Ok(r) => {
            write_value_csv(&out.join("value.csv"), &r.value)?;
            write_feedback_csv(&out.join("feedback.csv"), &r.policy, problem.solver.active_tol)?;
            metrics.converged = true;
            metrics.iterations = r.iterations;
            metrics.inner_iterations = r.inner_iterations;
            metrics.residuals = r.residuals.clone();
            metrics.sparsity = Some(sparsity_metrics(&r.policy, problem.solver.active_tol));
            write_json(&out.join("metrics.json"), &metrics)?;
            Ok(r)
        }
        Err(e) => {
            if let Error::NotConverged { iterations, residuals } = &e {
                metrics.iterations = *iterations;
                metrics.residuals = residuals.clone();
            }
            metrics.error = Some(e.to_string());
            write_json(&out.join("metrics.json"), &metrics)?;
            Err(e.into())
        }
    }
}

fn output_dir(cfg: &RunConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

pub fn cmd_solve(args: &SolveArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let problem = cfg.resolve()?;
    let out = output_dir(&cfg, &args.out);
    let r = solve_into(&problem, &out)?;
    let m = sparsity_metrics(&r.policy, problem.solver.active_tol);
    println!(
        "converged after {} iterations; frac_zero={:.4} frac_switching={:.4} frac_multi={:.4}; wrote {}",
        r.iterations,
        m.frac_zero,
        m.frac_switching,
        m.frac_multi,
        out.display()
    );
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let problem = cfg.resolve()?;
    let out = output_dir(&cfg, &args.out);
    let x0 = args
        .x0
        .clone()
        .or_else(|| cfg.simulate.x0.clone())
        .ok_or_else(|| CliError::Config("simulate needs --x0 or simulate.x0".into()))?;
    if x0.len() != problem.grid.dim() || !problem.grid.contains(&x0) {
        return Err(CliError::Config(format!("x0 = {x0:?} is not a point of the domain")));
    }
    let t_max = args.tmax.unwrap_or(cfg.simulate.t_max);
    ensure_dir(&out)?;
    let value_path = out.join("value.csv");
    let cached = if value_path.exists() {
        read_value_csv(&value_path, &problem.grid)?
    } else {
        None
    };
    let value = match cached {
        Some(v) => v,
        None => {
            eprintln!("no matching value.csv in {}; solving first", out.display());
            problem.solve()?.value
        }
    };
    let traj = simulate_closed_loop(
        &value,
        &problem.sys,
        &problem.cost,
        &problem.bounds,
        &problem.solver,
        &x0,
        cfg.simulate.sim_dt,
        t_max,
        cfg.simulate.stop_radius,
    )?;
    write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
    println!(
        "{} samples up to t={}; discounted cost {:.6}; V(x0)={:.6}",
        traj.len(),
        traj.times.last().copied().unwrap_or(0.0),
        traj.discounted_cost(),
        value.interpolate(&x0)
    );
    if !traj.clamp_events.is_empty() {
        eprintln!("state clamped to the domain {} times", traj.clamp_events.len());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub q: f64,
    pub frac_zero: f64,
    pub frac_switching: f64,
    pub frac_multi: f64,
    pub iters: usize,
}

/// A `(p, q)` pair that could not be solved, with the reason.
pub type SweepFailure = (f64, f64, String);

/// One solve per pair of the Cartesian product `ps × qs`; failures are
/// collected rather than aborting the sweep.
pub fn run_sweep(cfg: &RunConfig, ps: &[f64], qs: &[f64], out: &Path) -> CliResult<(Vec<SweepRow>, Vec<SweepFailure>)> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &q in qs {
        for &p in ps {
            let mut pair = cfg.clone();
            pair.penalty.p = p;
            pair.penalty.q = q;
            let attempt = pair.resolve().and_then(|problem| {
                let dir = out.join(format!("p{p}_q{q}"));
                let r = solve_into(&problem, &dir)?;
                Ok((r, problem.solver.active_tol))
            });
            match attempt {
                Ok((r, tol)) => {
                    let m = sparsity_metrics(&r.policy, tol);
                    rows.push(SweepRow {
                        p,
                        q,
                        frac_zero: m.frac_zero,
                        frac_switching: m.frac_switching,
                        frac_multi: m.frac_multi,
                        iters: r.iterations,
                    });
                }
                Err(e) => {
                    eprintln!("sweep pair p={p} q={q} failed: {e}");
                    failures.push((p, q, e.to_string()));
                }
            }
        }
    }
    let header = ["p", "q", "frac_zero", "frac_switching", "frac_multi", "iters"]
        .map(String::from)
        .to_vec();
    write_rows(
        &out.join("sweep.csv"),
        header,
        rows.iter().map(|r| {
            [r.p, r.q, r.frac_zero, r.frac_switching, r.frac_multi]
                .iter()
                .map(|v| fmt_f64(*v))
                .chain([r.iters.to_string()])
                .collect()
        }),
    )?;
    if !failures.is_empty() {
        write_rows(
            &out.join("sweep_failures.csv"),
            vec!["p".into(), "q".into(), "error".into()],
            failures
                .iter()
                .map(|(p, q, e)| vec![fmt_f64(*p), fmt_f64(*q), e.clone()]),
        )?;
    }
    Ok((rows, failures))
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let out = output_dir(&cfg, &args.out);
    let (rows, failures) = run_sweep(&cfg, &args.p, &args.q, &out)?;
    for r in &rows {
        println!(
            "p={} q={}: frac_zero={:.4} frac_switching={:.4} frac_multi={:.4} iters={}",
            r.p, r.q, r.frac_zero, r.frac_switching, r.frac_multi, r.iters
        );
    }
    println!("{} solved, {} failed; wrote {}", rows.len(), failures.len(), out.join("sweep.csv").display());
    Ok(())
}

fn one_based(idx: &[usize]) -> String {
    let items: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", items.join(","))
}

fn vector(u: &[f64]) -> String {
    let items: Vec<String> = u.iter().map(|v| format!("{v}")).collect();
    format!("({})", items.join(","))
}

/// Text printed by `classify`.
pub fn classify_report(args: &ClassifyArgs) -> CliResult<String> {
    let params = PenaltyParams::new(args.p, args.q, 1.0, 1.0)?;
    let bounds = BoxConstraint::new(args.rho.clone())?;
    let prob = PointwiseProblem::new(args.phi.clone(), args.gamma_t)?;
    let cls = classify_indices(&prob, &bounds, args.q)?;
    let min = minimize_box(&prob, &bounds, &params)?;
    let mut text = format!(
        "I^- = {}\nI^0 = {}\nI^+ = {}\nu* = {}\nG(u*) = {}\n",
        one_based(&cls.i_minus),
        one_based(&cls.i_zero),
        one_based(&cls.i_plus),
        vector(&min.u),
        min.value
    );
    if args.oracle {
        let bf = brute_force_min(&prob, Constraint::Box(&bounds), &params, args.resolution)?;
        text += &format!(
            "brute force ({} points per axis): u = {}, G = {}, gap = {:e}\n",
            args.resolution,
            vector(&bf.u),
            bf.value,
            min.value - bf.value
        );
    }
    Ok(text)
}

pub fn cmd_classify(args: &ClassifyArgs) -> CliResult<()> {
    print!("{}", classify_report(args)?);
    Ok(())
}

pub fn balls_file_name(p: f64, q: f64) -> String {
    format!("balls_p{p}_q{q}.csv")
}

pub fn cmd_balls(args: &BallsArgs) -> CliResult<()> {
    if args.resolution < 2 {
        return Err(CliError::Config("resolution must be at least 2".into()));
    }
    ensure_dir(&args.out)?;
    let axis = crate::penalty::linspace(-1.0, 1.0, args.resolution);
    for &q in &args.q {
        for &p in &args.p {
            let params = match PenaltyParams::new(p, q, 1.0, 1.0) {
                Ok(params) => params,
                Err(e) => {
                    eprintln!("skipping p={p} q={q}: {e}");
                    continue;
                }
            };
            let path = args.out.join(balls_file_name(p, q));
            let rows = axis.iter().flat_map(|u2| {
                let params = &params;
                axis.iter().map(move |u1| {
                    let v = params.quasi_norm(&[*u1, *u2]);
                    vec![fmt_f64(*u1), fmt_f64(*u2), fmt_f64(v)]
                })
            });
            write_rows(&path, vec!["u1".into(), "u2".into(), "value".into()], rows)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Balls(a) => cmd_balls(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
