//! Open-loop optimality machinery for linear dynamics `ẏ = Ay + Bu` with
//! piecewise-constant controls: forward and adjoint solves, interval
//! gradients, the forward-backward fixed-point sweep and a per-interval
//! optimality check.
//!
//! The infinite horizon is truncated at the end of the time grid, where the
//! adjoint is set to zero.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{BuiltinSystem, ControlAffineSystem, CostParams};
use crate::error::{Error, Result};
use crate::penalty::{
    brute_force_min, minimize_box_with, weight_bk, BoxConstraint, BoxOptions, Constraint,
    PointwiseProblem,
};

pub const DEFAULT_SUBSTEPS: usize = 10;

/// Slack allowed by [`verify_interval_optimality`], relative to `1 + |G_min|`.
pub const VERIFY_TOL: f64 = 1e-9;

/// Time partition `0 = t_0 < t_1 < … < t_K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a time grid needs at least one interval"));
        }
        if points[0] != 0.0 {
            return Err(Error::invalid(format!("time grid must start at 0 (got {})", points[0])));
        }
        for w in points.windows(2) {
            if !(w[0] < w[1]) || !w[1].is_finite() {
                return Err(Error::InvalidInterval { start: w[0], end: w[1] });
            }
        }
        Ok(Self { points })
    }

    /// Intervals of length `delta` up to `horizon`; the last one is shortened
    /// if `delta` does not divide `horizon`.
    pub fn uniform(delta: f64, horizon: f64) -> Result<Self> {
        if !(delta > 0.0 && horizon > 0.0 && delta.is_finite() && horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "need positive step and horizon (got {delta}, {horizon})"
            )));
        }
        let k = (horizon / delta - 1e-9).ceil().max(1.0) as usize;
        let mut points: Vec<f64> = (0..k).map(|i| i as f64 * delta).collect();
        points.push(horizon);
        Self::new(points)
    }

    /// Number of intervals `K`.
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.points[k], self.points[k + 1])
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// `b_k = ∫_{I_k} e^{-λt} dt` for every interval.
    pub fn weights(&self, lambda: f64) -> Result<Vec<f64>> {
        self.points
            .windows(2)
            .map(|w| weight_bk(lambda, w[0], w[1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::invalid(format!(
                "A must be square and non-empty (got {}x{})",
                a.nrows(),
                a.ncols()
            )));
        }
        Error::check_len("rows of B", a.nrows(), b.nrows())?;
        if b.ncols() == 0 {
            return Err(Error::invalid("B needs at least one column"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("A and B must have finite entries"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn to_control_affine(&self) -> Result<ControlAffineSystem> {
        BuiltinSystem::Linear {
            a: self.a.clone(),
            b: self.b.clone(),
        }
        .build()
    }
}

/// Dense samples of the state, `substeps` per interval; interval boundaries
/// are shared samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub substeps: usize,
}

/// Samples of `φ` on the same time nodes as the state path, up to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub substeps: usize,
}

/// `φ_k = ∫_{I_k} Bᵀφ dt` and `γ_k = γ b_k` for every interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalGradients {
    pub phi: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

fn check_controls(sys: &LinearSystem, grid: &TimeGrid, u: &[Vec<f64>]) -> Result<()> {
    Error::check_len("interval controls", grid.len(), u.len())?;
    for uk in u {
        Error::check_len("control vector", sys.control_dim(), uk.len())?;
        if uk.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("controls must be finite"));
        }
    }
    Ok(())
}

/// Classical RK4 with `substeps` equal steps per interval and `u` frozen on each.
pub fn integrate_forward(
    sys: &LinearSystem,
    grid: &TimeGrid,
    u: &[Vec<f64>],
    x0: &[f64],
    substeps: usize,
) -> Result<StatePath> {
    check_controls(sys, grid, u)?;
    Error::check_len("initial state", sys.state_dim(), x0.len())?;
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    let a = &sys.a;
    let mut y = DVector::from_column_slice(x0);
    let mut times = Vec::with_capacity(grid.len() * substeps + 1);
    let mut states = Vec::with_capacity(grid.len() * substeps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    for (k, uk) in u.iter().enumerate() {
        let (t0, t1) = grid.interval(k);
        let h = (t1 - t0) / substeps as f64;
        let bu = &sys.b * DVector::from_column_slice(uk);
        let f = |y: &DVector<f64>| a * y + &bu;
        for s in 1..=substeps {
            let k1 = f(&y);
            let k2 = f(&(&y + &k1 * (0.5 * h)));
            let k3 = f(&(&y + &k2 * (0.5 * h)));
            let k4 = f(&(&y + &k3 * h));
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    context: format!("forward state solve on interval {k}"),
                    state: states.last().cloned().unwrap_or_default(),
                });
            }
            times.push(if s == substeps { t1 } else { t0 + s as f64 * h });
            states.push(y.as_slice().to_vec());
        }
    }
    Ok(StatePath {
        times,
        states,
        controls: u.to_vec(),
        substeps,
    })
}

/// Backward RK4 for `−φ̇ = Aᵀφ + e^{-λt}(y − y_d)` from `φ(horizon) = 0`.
///
/// Between samples the state is reconstructed by cubic Hermite interpolation
/// using `ẏ = Ay + Bu`, which keeps the scheme fourth order.
pub fn integrate_adjoint(
    sys: &LinearSystem,
    path: &StatePath,
    cost: &CostParams,
    horizon: f64,
) -> Result<AdjointPath> {
    Error::check_len("target", sys.state_dim(), cost.target.len())?;
    let end = path
        .times
        .iter()
        .position(|t| (t - horizon).abs() <= 1e-9 * (1.0 + horizon.abs()))
        .ok_or_else(|| Error::invalid(format!("horizon {horizon} is not a sample time of the state path")))?;
    let lambda = cost.penalty.lambda;
    let a = &sys.a;
    let at = sys.a.transpose();
    let yd = DVector::from_column_slice(&cost.target);
    let g = |t: f64, y: &DVector<f64>, p: &DVector<f64>| -> DVector<f64> {
        -(&at * p) - (y - &yd) * (-lambda * t).exp()
    };

    let d = sys.state_dim();
    let mut values = vec![vec![0.0; d]; end + 1];
    let mut p = DVector::zeros(d);
    for j in (0..end).rev() {
        let (t0, t1) = (path.times[j], path.times[j + 1]);
        let h = t1 - t0;
        let bu = &sys.b * DVector::from_column_slice(&path.controls[j / path.substeps]);
        let y0 = DVector::from_column_slice(&path.states[j]);
        let y1 = DVector::from_column_slice(&path.states[j + 1]);
        let dy0 = a * &y0 + &bu;
        let dy1 = a * &y1 + &bu;
        let ym = (&y0 + &y1) * 0.5 + (dy0 - dy1) * (h / 8.0);
        let tm = 0.5 * (t0 + t1);
        let k1 = g(t1, &y1, &p);
        let k2 = g(tm, &ym, &(&p - &k1 * (0.5 * h)));
        let k3 = g(tm, &ym, &(&p - &k2 * (0.5 * h)));
        let k4 = g(t0, &y0, &(&p - &k3 * h));
        p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "adjoint solve".into(),
                state: path.states[j].clone(),
            });
        }
        values[j] = p.as_slice().to_vec();
    }
    Ok(AdjointPath {
        times: path.times[..=end].to_vec(),
        values,
        substeps: path.substeps,
    })
}

/// Composite trapezoid rule for `∫_{I_k} Bᵀφ dt` over the stored samples.
pub fn interval_gradient(adj: &AdjointPath, sys: &LinearSystem, grid: &TimeGrid, k: usize) -> Result<Vec<f64>> {
    if k >= grid.len() {
        return Err(Error::invalid(format!("interval {k} out of range ({} intervals)", grid.len())));
    }
    let (lo, hi) = (k * adj.substeps, (k + 1) * adj.substeps);
    if hi >= adj.times.len() {
        return Err(Error::invalid(format!("adjoint path does not cover interval {k}")));
    }
    let d = sys.state_dim();
    let mut acc = DVector::zeros(d);
    for j in lo..hi {
        let h = adj.times[j + 1] - adj.times[j];
        let s = DVector::from_column_slice(&adj.values[j]) + DVector::from_column_slice(&adj.values[j + 1]);
        acc += s * (0.5 * h);
    }
    Ok((sys.b.transpose() * acc).as_slice().to_vec())
}

pub fn interval_gradients(
    adj: &AdjointPath,
    sys: &LinearSystem,
    grid: &TimeGrid,
    cost: &CostParams,
) -> Result<IntervalGradients> {
    let phi = (0..grid.len())
        .map(|k| interval_gradient(adj, sys, grid, k))
        .collect::<Result<Vec<_>>>()?;
    let gamma = grid
        .weights(cost.penalty.lambda)?
        .into_iter()
        .map(|b| cost.penalty.gamma * b)
        .collect();
    Ok(IntervalGradients { phi, gamma })
}

/// Truncated discretized cost: trapezoid rule for the discounted tracking
/// term on the state samples plus `γ Σ_k b_k ‖u_k‖_p^q`.
pub fn discretized_cost(path: &StatePath, grid: &TimeGrid, cost: &CostParams) -> Result<f64> {
    let lambda = cost.penalty.lambda;
    let f = |j: usize| (-lambda * path.times[j]).exp() * cost.state_cost(&path.states[j]);
    let mut tracking = 0.0;
    for j in 0..path.times.len() - 1 {
        tracking += 0.5 * (path.times[j + 1] - path.times[j]) * (f(j) + f(j + 1));
    }
    let weights = grid.weights(lambda)?;
    let penalty: f64 = path
        .controls
        .iter()
        .zip(&weights)
        .map(|(u, b)| b * cost.penalty.quasi_norm(u))
        .sum();
    Ok(tracking + cost.penalty.gamma * penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepStrategy {
    /// Replace every interval by its argmin at once, as in the fixed-point map.
    Plain,
    /// Accept a proposal only if it lowers `J^Δ`, otherwise fall back to
    /// subsets of the changed intervals ordered by their linearized gain.
    Descent,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub substeps: usize,
    pub strategy: SweepStrategy,
    pub box_options: BoxOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            substeps: DEFAULT_SUBSTEPS,
            strategy: SweepStrategy::Descent,
            box_options: BoxOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub iteration: usize,
    /// `J^Δ` of the controls entering this iteration.
    pub cost: f64,
    /// Intervals whose argmin differs from the current control.
    pub changed: usize,
    /// Intervals actually updated.
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub controls: Vec<Vec<f64>>,
    pub converged: bool,
    pub cost: f64,
    pub history: Vec<SweepRecord>,
}

struct Evaluation {
    cost: f64,
    grads: IntervalGradients,
}

struct SweepContext<'a> {
    sys: &'a LinearSystem,
    grid: &'a TimeGrid,
    cost: &'a CostParams,
    bounds: &'a BoxConstraint,
    x0: &'a [f64],
    opts: &'a SweepOptions,
}

impl SweepContext<'_> {
    fn evaluate(&self, u: &[Vec<f64>]) -> Result<Evaluation> {
        let path = integrate_forward(self.sys, self.grid, u, self.x0, self.opts.substeps)?;
        let adj = integrate_adjoint(self.sys, &path, self.cost, self.grid.horizon())?;
        Ok(Evaluation {
            cost: discretized_cost(&path, self.grid, self.cost)?,
            grads: interval_gradients(&adj, self.sys, self.grid, self.cost)?,
        })
    }

    fn cost_of(&self, u: &[Vec<f64>]) -> Result<f64> {
        let path = integrate_forward(self.sys, self.grid, u, self.x0, self.opts.substeps)?;
        discretized_cost(&path, self.grid, self.cost)
    }

    fn problems(&self, grads: &IntervalGradients) -> Result<Vec<PointwiseProblem>> {
        grads
            .phi
            .iter()
            .zip(&grads.gamma)
            .map(|(phi, g)| PointwiseProblem::new(phi.clone(), *g))
            .collect()
    }

    fn argmins(&self, probs: &[PointwiseProblem]) -> Result<Vec<Vec<f64>>> {
        probs
            .par_iter()
            .map(|p| minimize_box_with(p, self.bounds, &self.cost.penalty, &self.opts.box_options).map(|m| m.u))
            .collect()
    }
}

/// Iterates the map `u ↦ (argmin_{v ∈ U} ⟨φ_k(u), v⟩ + γ_k‖v‖_p^q)_k` from zero
/// controls until a fixed point is reached or `max_outer` iterations pass.
pub fn forward_backward_sweep(
    sys: &LinearSystem,
    grid: &TimeGrid,
    cost: &CostParams,
    bounds: &BoxConstraint,
    x0: &[f64],
    max_outer: usize,
) -> Result<SweepResult> {
    forward_backward_sweep_with(sys, grid, cost, bounds, x0, max_outer, &SweepOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn forward_backward_sweep_with(
    sys: &LinearSystem,
    grid: &TimeGrid,
    cost: &CostParams,
    bounds: &BoxConstraint,
    x0: &[f64],
    max_outer: usize,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    Error::check_len("control bounds", sys.control_dim(), bounds.dim())?;
    let ctx = SweepContext {
        sys,
        grid,
        cost,
        bounds,
        x0,
        opts,
    };
    let mut u = vec![vec![0.0; sys.control_dim()]; grid.len()];
    let mut eval = ctx.evaluate(&u)?;
    let mut seen: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut history = Vec::new();
    for iteration in 1..=max_outer {
        let probs = ctx.problems(&eval.grads)?;
        let proposal = ctx.argmins(&probs)?;
        let changed: Vec<usize> = (0..grid.len()).filter(|&k| proposal[k] != u[k]).collect();
        let mut record = SweepRecord {
            iteration,
            cost: eval.cost,
            changed: changed.len(),
            accepted: 0,
        };
        if changed.is_empty() {
            history.push(record);
            return Ok(SweepResult {
                controls: u,
                converged: true,
                cost: eval.cost,
                history,
            });
        }
        match opts.strategy {
            SweepStrategy::Plain => {
                if let Some(pos) = seen.iter().position(|s| *s == proposal) {
                    return Err(Error::Cycling {
                        cycle_length: seen.len() + 1 - pos,
                        iteration,
                    });
                }
                seen.push(std::mem::replace(&mut u, proposal));
                record.accepted = changed.len();
            }
            SweepStrategy::Descent => {
                let gain = |k: usize| {
                    let p = &probs[k];
                    p.objective(&u[k], &cost.penalty) - p.objective(&proposal[k], &cost.penalty)
                };
                let mut order: Vec<(f64, usize)> = changed.iter().map(|&k| (gain(k), k)).collect();
                order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let ranked: Vec<usize> = order.into_iter().map(|(_, k)| k).collect();
                let mut subsets: Vec<&[usize]> = Vec::new();
                let mut len = ranked.len();
                while len >= 1 {
                    subsets.push(&ranked[..len]);
                    len /= 2;
                }
                for i in 1..ranked.len() {
                    subsets.push(&ranked[i..=i]);
                }
                let mut accepted = None;
                for subset in subsets {
                    let mut trial = u.clone();
                    for &k in subset {
                        trial[k] = proposal[k].clone();
                    }
                    if ctx.cost_of(&trial)? < eval.cost {
                        accepted = Some((trial, subset.len()));
                        break;
                    }
                }
                match accepted {
                    Some((trial, n)) => {
                        u = trial;
                        record.accepted = n;
                    }
                    None => {
                        return Err(Error::Stalled {
                            iteration,
                            changed: changed.len(),
                        })
                    }
                }
            }
        }
        history.push(record);
        eval = ctx.evaluate(&u)?;
    }
    Ok(SweepResult {
        controls: u,
        converged: false,
        cost: eval.cost,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    /// `G_k(u_k) − min_{grid} G_k` per interval.
    pub slacks: Vec<f64>,
    pub tolerances: Vec<f64>,
    pub violations: Vec<usize>,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Compares every interval's control with a brute-force minimizer of the
/// interval problem `G_k(v) = ⟨φ_k, v⟩ + γ_k‖v‖_p^q` at the given controls.
#[allow(clippy::too_many_arguments)]
pub fn verify_interval_optimality(
    controls: &[Vec<f64>],
    sys: &LinearSystem,
    grid: &TimeGrid,
    cost: &CostParams,
    bounds: &BoxConstraint,
    x0: &[f64],
    oracle_resolution: usize,
    substeps: usize,
) -> Result<OptimalityReport> {
    let path = integrate_forward(sys, grid, controls, x0, substeps)?;
    let adj = integrate_adjoint(sys, &path, cost, grid.horizon())?;
    let grads = interval_gradients(&adj, sys, grid, cost)?;
    let results: Vec<(f64, f64)> = grads
        .phi
        .par_iter()
        .zip(&grads.gamma)
        .zip(controls)
        .map(|((phi, g), uk)| {
            let prob = PointwiseProblem::new(phi.clone(), *g)?;
            let best = brute_force_min(&prob, Constraint::Box(bounds), &cost.penalty, oracle_resolution)?;
            let slack = prob.objective(uk, &cost.penalty) - best.value;
            Ok((slack, VERIFY_TOL * (1.0 + best.value.abs())))
        })
        .collect::<Result<_>>()?;
    let (slacks, tolerances): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    let violations = (0..slacks.len()).filter(|&k| slacks[k] > tolerances[k]).collect();
    Ok(OptimalityReport {
        slacks,
        tolerances,
        violations,
    })
}
