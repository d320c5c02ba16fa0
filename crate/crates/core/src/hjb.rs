//! First-order semi-Lagrangian solver for the discounted stationary HJB
//! equation, with value iteration, policy iteration, feedback synthesis,
//! closed-loop rollouts and sparsity statistics.
//!
//! The discrete Bellman operator is
//! `T V(x) = min_{u ∈ U_h} e^{-λ dt} I[V](x + dt f(x,u)) + dt ℓ(x,u)`,
//! where `I` is multilinear interpolation with clamping at the boundary.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{running_cost, step_rk4, ControlAffineSystem, CostParams, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{RegularGrid, ScalarField, Stencil, VectorField, MAX_DIM};
use crate::penalty::{linspace, advance, BoxConstraint, PenaltyParams};

pub const DEFAULT_CONTROL_RESOLUTION: usize = 21;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 20_000;
pub const DEFAULT_EVAL_MAX_ITERS: usize = 200_000;
pub const MAX_CONTROL_CANDIDATES: usize = 1_000_000;

/// Policy improvement keeps the current control unless a rival wins by more
/// than this relative margin, which prevents flip-flopping between ties.
const KEEP_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    ValueIteration,
    PolicyIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub control_resolution: usize,
    /// Bound on the sup-norm distance to the discrete fixed point.
    pub tol: f64,
    /// Sweeps for value iteration, outer iterations for policy iteration.
    pub max_iters: usize,
    pub mode: SolverMode,
    pub active_tol: f64,
    /// Cap on Jacobi sweeps per policy evaluation.
    pub eval_max_iters: usize,
}

impl SolverConfig {
    /// Defaults around a given pseudo-time step.
    pub fn with_defaults(dt: f64, bounds: &BoxConstraint) -> Self {
        Self {
            dt,
            control_resolution: DEFAULT_CONTROL_RESOLUTION,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            mode: SolverMode::PolicyIteration,
            active_tol: default_active_tol(bounds, DEFAULT_CONTROL_RESOLUTION),
            eval_max_iters: DEFAULT_EVAL_MAX_ITERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive (got {})", self.dt)));
        }
        if self.control_resolution < 3 || self.control_resolution.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "control_resolution must be odd and >= 3 so that 0 is a candidate (got {})",
                self.control_resolution
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive (got {})", self.tol)));
        }
        if self.max_iters == 0 || self.eval_max_iters == 0 {
            return Err(Error::invalid("iteration caps must be at least 1"));
        }
        if !(self.active_tol.is_finite() && self.active_tol >= 0.0) {
            return Err(Error::invalid(format!(
                "active_tol must be non-negative (got {})",
                self.active_tol
            )));
        }
        Ok(())
    }
}

/// Half the finest control-grid spacing.
pub fn default_active_tol(bounds: &BoxConstraint, resolution: usize) -> f64 {
    let rho = bounds.rho().iter().copied().fold(f64::INFINITY, f64::min);
    rho / (resolution.max(2) - 1) as f64
}

/// `min_i h_i / max ‖f(x,u)‖₂` over grid nodes and box vertices, so that a
/// characteristic travels at most one cell per step.
pub fn default_dt(sys: &ControlAffineSystem, grid: &RegularGrid, bounds: &BoxConstraint) -> Result<f64> {
    check_shapes(sys, grid, bounds)?;
    let m = sys.control_dim();
    let d = sys.state_dim();
    let mut vertex = vec![0.0; m];
    let mut rhs = vec![0.0; d];
    let mut speed: f64 = 0.0;
    for (_, x) in grid.node_iter() {
        let terms = sys.terms(&x)?;
        for mask in 0..(1usize << m) {
            for (i, v) in vertex.iter_mut().enumerate() {
                let r = bounds.rho()[i];
                *v = if mask >> i & 1 == 1 { r } else { -r };
            }
            terms.rhs_into(&vertex, &mut rhs);
            speed = speed.max(rhs.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    let h = grid.min_spacing();
    Ok(if speed > 0.0 { h / speed } else { h })
}

/// The discretized control set `U_h`, ordered by number of nonzero
/// coordinates and then lexicographically. This order realizes the tie-break.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    dim: usize,
    values: Vec<f64>,
    penalties: Vec<f64>,
}

impl ControlSet {
    pub fn new(bounds: &BoxConstraint, resolution: usize, params: &PenaltyParams) -> Result<Self> {
        let m = bounds.dim();
        let count = (resolution as f64).powi(m as i32);
        if count > MAX_CONTROL_CANDIDATES as f64 {
            return Err(Error::Capacity {
                what: "control candidates",
                requested: count,
                cap: MAX_CONTROL_CANDIDATES as f64,
                hint: Some("lower control_resolution".into()),
            });
        }
        let axes: Vec<Vec<f64>> = bounds
            .rho()
            .iter()
            .map(|r| linspace(-r, *r, resolution))
            .collect();
        let mut all: Vec<Vec<f64>> = Vec::with_capacity(count as usize);
        let mut idx = vec![0usize; m];
        loop {
            all.push((0..m).map(|i| axes[i][idx[i]]).collect());
            if !advance(&mut idx, resolution) {
                break;
            }
        }
        let nnz = |u: &[f64]| u.iter().filter(|v| **v != 0.0).count();
        all.sort_by(|a, b| {
            nnz(a).cmp(&nnz(b)).then_with(|| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
        });
        let penalties = all.iter().map(|u| params.gamma * params.quasi_norm(u)).collect();
        Ok(Self {
            dim: m,
            values: all.concat(),
            penalties,
        })
    }

    pub fn len(&self) -> usize {
        self.penalties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.penalties.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `γ‖u_j‖_p^q`.
    pub fn penalty(&self, j: usize) -> f64 {
        self.penalties[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

/// The discrete Bellman operator with per-node data cached.
#[derive(Debug, Clone)]
pub struct BellmanOperator {
    grid: RegularGrid,
    controls: ControlSet,
    dt: f64,
    beta: f64,
    coords: Vec<f64>,
    drift: Vec<f64>,
    fields: Vec<f64>,
    state_cost: Vec<f64>,
}

/// Pre-evaluated dynamics and state cost at one point.
struct PointData<'a> {
    x: &'a [f64],
    drift: &'a [f64],
    fields: &'a [f64],
    state_cost: f64,
}

impl BellmanOperator {
    pub fn new(
        grid: &RegularGrid,
        sys: &ControlAffineSystem,
        cost: &CostParams,
        bounds: &BoxConstraint,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        check_shapes(sys, grid, bounds)?;
        Error::check_len("target", sys.state_dim(), cost.target.len())?;
        let controls = ControlSet::new(bounds, cfg.control_resolution, &cost.penalty)?;
        let n = grid.len();
        let d = sys.state_dim();
        let mut coords = Vec::with_capacity(n * d);
        let mut drift = Vec::with_capacity(n * d);
        let mut fields = Vec::with_capacity(n * d * sys.control_dim());
        let mut state_cost = Vec::with_capacity(n);
        for (_, x) in grid.node_iter() {
            let terms = sys.terms(&x)?;
            state_cost.push(cost.state_cost(&x));
            coords.extend_from_slice(&x);
            drift.extend_from_slice(&terms.drift);
            fields.extend_from_slice(&terms.fields);
        }
        Ok(Self {
            grid: grid.clone(),
            controls,
            dt: cfg.dt,
            beta: (-cost.penalty.lambda * cfg.dt).exp(),
            coords,
            drift,
            fields,
            state_cost,
        })
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    /// Per-step discount `e^{-λ dt}`.
    pub fn discount(&self) -> f64 {
        self.beta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn node(&self, i: usize) -> PointData<'_> {
        let d = self.grid.dim();
        let dm = d * self.controls.dim();
        PointData {
            x: &self.coords[i * d..(i + 1) * d],
            drift: &self.drift[i * d..(i + 1) * d],
            fields: &self.fields[i * dm..(i + 1) * dm],
            state_cost: self.state_cost[i],
        }
    }

    fn foot_stencil(&self, pt: &PointData<'_>, j: usize) -> Stencil {
        let d = pt.x.len();
        let u = self.controls.get(j);
        let mut foot = [0.0; MAX_DIM];
        for k in 0..d {
            let mut v = pt.drift[k];
            for (i, ui) in u.iter().enumerate() {
                v += pt.fields[i * d + k] * ui;
            }
            foot[k] = pt.x[k] + self.dt * v;
        }
        self.grid.stencil(&foot[..d])
    }

    #[inline]
    fn candidate_value(&self, v: &[f64], pt: &PointData<'_>, j: usize) -> f64 {
        self.beta * self.foot_stencil(pt, j).apply(v)
            + self.dt * (pt.state_cost + self.controls.penalty(j))
    }

    /// Minimum and first minimizing candidate index in tie-break order.
    fn scan(&self, v: &[f64], pt: &PointData<'_>) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for j in 0..self.controls.len() {
            let val = self.candidate_value(v, pt, j);
            if val < best {
                best = val;
                arg = j;
            }
        }
        (best, arg)
    }

    /// `(T V)(node)` and the index of its minimizing control.
    pub fn update_node(&self, v: &[f64], node: usize) -> (f64, usize) {
        self.scan(v, &self.node(node))
    }

    /// Bellman update at an off-grid state.
    pub fn update_point(&self, v: &[f64], sys: &ControlAffineSystem, cost: &CostParams, x: &[f64]) -> Result<(f64, usize)> {
        let terms = sys.terms(x)?;
        let pt = PointData {
            x,
            drift: &terms.drift,
            fields: &terms.fields,
            state_cost: cost.state_cost(x),
        };
        Ok(self.scan(v, &pt))
    }

    /// One full Bellman sweep reading `v` and writing `out` and `policy`.
    pub fn sweep(&self, v: &[f64], out: &mut [f64], policy: &mut [usize]) {
        out.par_iter_mut()
            .zip(policy.par_iter_mut())
            .enumerate()
            .for_each(|(i, (o, p))| {
                let (val, j) = self.update_node(v, i);
                *o = val;
                *p = j;
            });
    }

    /// `T V` as a field together with its argmin feedback.
    pub fn apply(&self, v: &ScalarField) -> Result<(ScalarField, VectorField)> {
        Error::check_len("value field", self.grid.len(), v.values().len())?;
        let mut out = vec![0.0; self.grid.len()];
        let mut policy = vec![0usize; self.grid.len()];
        self.sweep(v.values(), &mut out, &mut policy);
        Ok((
            ScalarField::new(self.grid.clone(), out)?,
            self.policy_field(&policy)?,
        ))
    }

    pub fn policy_field(&self, policy: &[usize]) -> Result<VectorField> {
        let data = policy.iter().flat_map(|j| self.controls.get(*j).iter().copied()).collect();
        VectorField::new(self.grid.clone(), self.controls.dim(), data)
    }

    /// Greedy improvement that keeps the incumbent control unless beaten by
    /// more than a tiny margin. Writes `T V` into `out`.
    fn improve(&self, v: &[f64], current: &[usize], out: &mut [f64], next: &mut [usize]) {
        out.par_iter_mut()
            .zip(next.par_iter_mut())
            .enumerate()
            .for_each(|(i, (o, p))| {
                let pt = self.node(i);
                let (best, j) = self.scan(v, &pt);
                let incumbent = self.candidate_value(v, &pt, current[i]);
                *o = best;
                *p = if best < incumbent - KEEP_MARGIN * (1.0 + incumbent.abs()) {
                    j
                } else {
                    current[i]
                };
            });
    }

    /// Solves `V = β I_π[V] + dt ℓ_π` by Jacobi sweeps with the self-coupling
    /// eliminated, starting from `v`. Returns the number of sweeps.
    fn evaluate(&self, policy: &[usize], v: &mut Vec<f64>, tol: f64, max_sweeps: usize) -> Result<usize> {
        let n = self.grid.len();
        let frozen: Vec<(Stencil, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pt = self.node(i);
                let st = self.foot_stencil(&pt, policy[i]);
                let c = self.dt * (pt.state_cost + self.controls.penalty(policy[i]));
                (st, st.weight_on(i), c)
            })
            .collect();
        let beta = self.beta;
        let kappa = frozen
            .iter()
            .map(|(_, w, _)| beta * (1.0 - w) / (1.0 - beta * w))
            .fold(0.0, f64::max);
        let factor = kappa / (1.0 - kappa);
        let mut next = vec![0.0; n];
        let mut residuals = Vec::new();
        for sweep in 1..=max_sweeps {
            next.par_iter_mut().enumerate().for_each(|(i, o)| {
                let (st, w, c) = &frozen[i];
                let mut acc = 0.0;
                for s in 0..st.count {
                    if st.corners[s] != i && st.weights[s] != 0.0 {
                        acc += st.weights[s] * v[st.corners[s]];
                    }
                }
                *o = (beta * acc + c) / (1.0 - beta * w);
            });
            let (delta, scale) = sup_diff(v, &next);
            if !delta.is_finite() {
                return Err(self.numeric_error("policy evaluation", v, &next));
            }
            std::mem::swap(v, &mut next);
            if factor * delta <= tol || delta <= 4.0 * f64::EPSILON * (1.0 + scale) {
                return Ok(sweep);
            }
            if sweep % 1000 == 0 {
                residuals.push(delta);
            }
        }
        residuals.push(sup_diff(v, &next).0);
        Err(Error::NotConverged {
            iterations: max_sweeps,
            residuals,
        })
    }

    fn numeric_error(&self, context: &str, a: &[f64], b: &[f64]) -> Error {
        let i = a
            .iter()
            .zip(b)
            .position(|(x, y)| !(x.is_finite() && y.is_finite()))
            .unwrap_or(0);
        Error::Numeric {
            context: context.into(),
            state: self.grid.node_coords(i),
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0f64, 0.0f64), |(d, s), (x, y)| {
        let diff = (x - y).abs();
        (if diff.is_nan() { f64::NAN } else { d.max(diff) }, s.max(y.abs()))
    })
}

fn check_shapes(sys: &ControlAffineSystem, grid: &RegularGrid, bounds: &BoxConstraint) -> Result<()> {
    Error::check_len("grid dimension", sys.state_dim(), grid.dim())?;
    Error::check_len("control bounds", sys.control_dim(), bounds.dim())
}

/// Output of a fixed-point solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: ScalarField,
    pub policy: VectorField,
    /// `sup |T V − V|` per value-iteration sweep or per policy improvement.
    pub residuals: Vec<f64>,
    /// Sweeps (value iteration) or outer iterations (policy iteration).
    pub iterations: usize,
    /// Total policy-evaluation sweeps; zero for value iteration.
    pub inner_iterations: usize,
    pub discount: f64,
}

/// Dispatches on `cfg.mode`.
pub fn solve(
    v0: &ScalarField,
    sys: &ControlAffineSystem,
    cost: &CostParams,
    bounds: &BoxConstraint,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    match cfg.mode {
        SolverMode::ValueIteration => value_iteration(v0, sys, cost, bounds, cfg),
        SolverMode::PolicyIteration => policy_iteration(v0, sys, cost, bounds, cfg),
    }
}

/// Iterates `V ← T V` until `β/(1−β) · sup|T V − V| ≤ tol`, which bounds the
/// distance of the returned iterate to the discrete fixed point by `tol`.
pub fn value_iteration(
    v0: &ScalarField,
    sys: &ControlAffineSystem,
    cost: &CostParams,
    bounds: &BoxConstraint,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    let op = BellmanOperator::new(v0.grid(), sys, cost, bounds, cfg)?;
    let n = op.grid.len();
    let factor = op.beta / (1.0 - op.beta);
    let mut v = v0.values().to_vec();
    let mut next = vec![0.0; n];
    let mut policy = vec![0usize; n];
    let mut residuals = Vec::new();
    for it in 1..=cfg.max_iters {
        op.sweep(&v, &mut next, &mut policy);
        let (res, _) = sup_diff(&v, &next);
        if !res.is_finite() {
            return Err(op.numeric_error("value iteration", &v, &next));
        }
        std::mem::swap(&mut v, &mut next);
        residuals.push(res);
        if factor * res <= cfg.tol {
            return Ok(SolveResult {
                policy: op.policy_field(&policy)?,
                value: ScalarField::new(op.grid.clone(), v)?,
                residuals,
                iterations: it,
                inner_iterations: 0,
                discount: op.beta,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iters,
        residuals,
    })
}

/// Howard's algorithm: exact-to-tolerance policy evaluation alternated with
/// greedy improvement. Stops once the policy is stable and
/// `sup|T V − V| / (1−β) ≤ tol`.
pub fn policy_iteration(
    v0: &ScalarField,
    sys: &ControlAffineSystem,
    cost: &CostParams,
    bounds: &BoxConstraint,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    let op = BellmanOperator::new(v0.grid(), sys, cost, bounds, cfg)?;
    let n = op.grid.len();
    let beta = op.beta;
    let factor = 1.0 / (1.0 - beta);
    let mut v = v0.values().to_vec();
    let mut tv = vec![0.0; n];
    let mut policy = vec![0usize; n];
    op.sweep(&v, &mut tv, &mut policy);
    let mut next_policy = policy.clone();
    let mut eval_tol = 0.25 * cfg.tol;
    let mut residuals = Vec::new();
    let mut inner = 0;
    for outer in 1..=cfg.max_iters {
        inner += op.evaluate(&policy, &mut v, eval_tol, cfg.eval_max_iters)?;
        op.improve(&v, &policy, &mut tv, &mut next_policy);
        let (res, _) = sup_diff(&v, &tv);
        if !res.is_finite() {
            return Err(op.numeric_error("policy improvement", &v, &tv));
        }
        residuals.push(res);
        if next_policy == policy {
            if factor * res <= cfg.tol {
                return Ok(SolveResult {
                    policy: op.policy_field(&policy)?,
                    value: ScalarField::new(op.grid.clone(), v)?,
                    residuals,
                    iterations: outer,
                    inner_iterations: inner,
                    discount: beta,
                });
            }
            eval_tol *= 0.1;
        }
        std::mem::swap(&mut policy, &mut next_policy);
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iters,
        residuals,
    })
}

/// One node of the Bellman operator: `(T V)(node)` and its minimizing control.
pub fn sl_bellman_update(
    v: &ScalarField,
    sys: &ControlAffineSystem,
    cost: &CostParams,
    bounds: &BoxConstraint,
    cfg: &SolverConfig,
    node: usize,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let grid = v.grid();
    check_shapes(sys, grid, bounds)?;
    if node >= grid.len() {
        return Err(Error::invalid(format!("node {node} out of range ({} nodes)", grid.len())));
    }
    let controls = ControlSet::new(bounds, cfg.control_resolution, &cost.penalty)?;
    let x = grid.node_coords(node);
    let op = PointOperator::new(grid, &controls, cfg.dt, cost.penalty.lambda);
    let (val, j) = op.eval(v.values(), sys, cost, &x)?;
    Ok((val, controls.get(j).to_vec()))
}

/// Per-node argmin of `T V`.
pub fn synthesize_feedback(
    v: &ScalarField,
    sys: &ControlAffineSystem,
    cost: &CostParams,
    bounds: &BoxConstraint,
    cfg: &SolverConfig,
) -> Result<VectorField> {
    let op = BellmanOperator::new(v.grid(), sys, cost, bounds, cfg)?;
    Ok(op.apply(v)?.1)
}

/// Bellman minimization at arbitrary states without per-node caches.
struct PointOperator<'a> {
    grid: &'a RegularGrid,
    controls: &'a ControlSet,
    dt: f64,
    beta: f64,
}

impl<'a> PointOperator<'a> {
    fn new(grid: &'a RegularGrid, controls: &'a ControlSet, dt: f64, lambda: f64) -> Self {
        Self {
            grid,
            controls,
            dt,
            beta: (-lambda * dt).exp(),
        }
    }

    fn eval(&self, v: &[f64], sys: &ControlAffineSystem, cost: &CostParams, x: &[f64]) -> Result<(f64, usize)> {
        let d = x.len();
        let terms = sys.terms(x)?;
        let sc = cost.state_cost(x);
        let mut foot = [0.0; MAX_DIM];
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (j, u) in self.controls.iter().enumerate() {
            for k in 0..d {
                let mut vel = terms.drift[k];
                for (i, ui) in u.iter().enumerate() {
                    vel += terms.fields[i * d + k] * ui;
                }
                foot[k] = x[k] + self.dt * vel;
            }
            let val = self.beta * self.grid.stencil(&foot[..d]).apply(v)
                + self.dt * (sc + self.controls.penalty(j));
            if val < best {
                best = val;
                arg = j;
            }
        }
        Ok((best, arg))
    }
}

/// Sample-and-hold rollout of the SL feedback evaluated at off-grid states.
///
/// The discounted running cost is accumulated with the left-endpoint rule.
/// States leaving the domain are clamped back and the sample index logged.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    v: &ScalarField,
    sys: &ControlAffineSystem,
    cost: &CostParams,
    bounds: &BoxConstraint,
    cfg: &SolverConfig,
    x0: &[f64],
    sim_dt: f64,
    t_max: f64,
    stop_radius: f64,
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = v.grid();
    check_shapes(sys, grid, bounds)?;
    Error::check_len("initial state", grid.dim(), x0.len())?;
    if !grid.contains(x0) {
        return Err(Error::invalid(format!("initial state {x0:?} lies outside the domain")));
    }
    if !(sim_dt.is_finite() && sim_dt > 0.0) {
        return Err(Error::invalid(format!("sim_dt must be positive (got {sim_dt})")));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::invalid(format!("t_max must be non-negative (got {t_max})")));
    }
    let controls = ControlSet::new(bounds, cfg.control_resolution, &cost.penalty)?;
    let op = PointOperator::new(grid, &controls, cfg.dt, cost.penalty.lambda);
    let lambda = cost.penalty.lambda;
    let steps = (t_max / sim_dt - 1e-9).ceil().max(0.0) as usize;

    let mut traj = Trajectory::default();
    let mut x = x0.to_vec();
    let mut acc = 0.0;
    for k in 0..=steps {
        let t = k as f64 * sim_dt;
        let (_, j) = op.eval(v.values(), sys, cost, &x)?;
        let u = controls.get(j).to_vec();
        let ell = running_cost(&x, &u, cost)?;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.controls.push(u.clone());
        traj.running_costs.push(ell);
        traj.cumulative_cost.push(acc);
        if k == steps || cost.distance_to_target(&x) < stop_radius {
            break;
        }
        acc += (-lambda * t).exp() * ell * sim_dt;
        x = step_rk4(sys, &x, &u, sim_dt)?;
        if !grid.contains(&x) {
            grid.project_into(&mut x);
            traj.clamp_events.push(k + 1);
        }
    }
    Ok(traj)
}

/// Fractions of nodes with zero, one, and at least two active coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsityMetrics {
    pub frac_zero: f64,
    pub frac_switching: f64,
    pub frac_multi: f64,
}

pub fn sparsity_metrics(feedback: &VectorField, active_tol: f64) -> SparsityMetrics {
    let mut counts = [0usize; 3];
    for u in feedback.iter() {
        let active = u.iter().filter(|v| v.abs() > active_tol).count();
        counts[active.min(2)] += 1;
    }
    let n = counts.iter().sum::<usize>().max(1) as f64;
    SparsityMetrics {
        frac_zero: counts[0] as f64 / n,
        frac_switching: counts[1] as f64 / n,
        frac_multi: counts[2] as f64 / n,
    }
}
