#![allow(dead_code)]

use sparse_hjb::dynamics::{BuiltinSystem, ControlAffineSystem, CostParams};
use sparse_hjb::grid::{RegularGrid, ScalarField};
use sparse_hjb::hjb::{default_active_tol, default_dt, solve, SolveResult, SolverConfig};
use sparse_hjb::penalty::{BoxConstraint, PenaltyParams};

pub const GAMMA: f64 = 1.0;
pub const LAMBDA: f64 = 0.2;
pub const RHO: f64 = 0.5;

pub struct Bench {
    pub grid: RegularGrid,
    pub sys: ControlAffineSystem,
    pub cost: CostParams,
    pub bounds: BoxConstraint,
    pub cfg: SolverConfig,
}

impl Bench {
    pub fn solve(&self) -> SolveResult {
        solve(
            &ScalarField::zeros(self.grid.clone()),
            &self.sys,
            &self.cost,
            &self.bounds,
            &self.cfg,
        )
        .expect("benchmark solve")
    }
}

/// `ẋ = u` on `[-1,1]²`, `y_d = 0`, `ρ = 0.5`, `γ = 1`, `λ = 0.2`, `q = 1`.
pub fn eikonal(nodes: usize, resolution: usize, p: f64) -> Bench {
    let grid = RegularGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![nodes, nodes]).unwrap();
    let sys = BuiltinSystem::Eikonal { dim: 2 }.build().unwrap();
    let cost = CostParams::new(vec![0.0, 0.0], PenaltyParams::new(p, 1.0, GAMMA, LAMBDA).unwrap()).unwrap();
    let bounds = BoxConstraint::uniform(RHO, 2).unwrap();
    let dt = default_dt(&sys, &grid, &bounds).unwrap();
    let mut cfg = SolverConfig::with_defaults(dt, &bounds);
    cfg.control_resolution = resolution;
    cfg.active_tol = default_active_tol(&bounds, resolution);
    Bench { grid, sys, cost, bounds, cfg }
}

/// Controlled double well on `[-2,2]²` steered to `(1,0)` with `γ = 0.1`,
/// `ρ = 1`, `λ = 0.01`.
pub fn double_well(nodes: usize, resolution: usize, p: f64) -> Bench {
    let grid = RegularGrid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![nodes, nodes]).unwrap();
    let sys = BuiltinSystem::DoubleWell.build().unwrap();
    let cost = CostParams::new(vec![1.0, 0.0], PenaltyParams::new(p, 1.0, 0.1, 0.01).unwrap()).unwrap();
    let bounds = BoxConstraint::uniform(1.0, 2).unwrap();
    let dt = default_dt(&sys, &grid, &bounds).unwrap();
    let mut cfg = SolverConfig::with_defaults(dt, &bounds);
    cfg.control_resolution = resolution;
    cfg.active_tol = default_active_tol(&bounds, resolution);
    Bench { grid, sys, cost, bounds, cfg }
}

/// Semi-Lagrangian dynamic programming for the scalar problem
/// `ẋ = u`, `|u| ≤ ρ`, cost `∫ e^{-λt}(½x² + γ|u|) dt` on `[-1, 1]`.
///
/// Written separately from the library solver: the step is chosen so that a
/// full bang moves exactly one node, and the fixed point is reached with
/// alternating Gauss-Seidel sweeps where each node's self-coupling is solved
/// for exactly.
pub struct Oracle1d {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub controls: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Oracle1d {
    pub fn solve(n: usize, resolution: usize, rho: f64, gamma: f64, lambda: f64) -> Self {
        let h = 2.0 / (n - 1) as f64;
        let dt = h / rho;
        let beta = (-lambda * dt).exp();
        let nodes: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
        let half = (resolution - 1) / 2;
        let mut controls: Vec<f64> = (0..resolution)
            .map(|j| rho * (j as f64 - half as f64) / half as f64)
            .collect();
        // Zero first, then by magnitude, negative before positive.
        controls.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        let mut o = Self {
            nodes,
            values: vec![0.0; n],
            controls,
            h,
            dt,
            beta,
            gamma,
        };
        for sweep in 0..100_000 {
            let mut change: f64 = 0.0;
            let order: Box<dyn Iterator<Item = usize>> = if sweep % 2 == 0 {
                Box::new(0..n)
            } else {
                Box::new((0..n).rev())
            };
            for i in order {
                let v = o.node_update(i);
                change = change.max((v - o.values[i]).abs());
                o.values[i] = v;
            }
            if change < 1e-14 {
                return o;
            }
        }
        panic!("1-D oracle did not converge");
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.nodes.len();
        let s = (x.clamp(-1.0, 1.0) + 1.0) / self.h;
        let mut j = s.floor();
        let mut f = s - j;
        if f > 1.0 - 1e-9 {
            j += 1.0;
            f = 0.0;
        } else if f < 1e-9 {
            f = 0.0;
        }
        let j = j as usize;
        if j >= n - 1 {
            (n - 2, 1.0)
        } else {
            (j, f)
        }
    }

    fn node_update(&self, i: usize) -> f64 {
        let x = self.nodes[i];
        let mut best = f64::INFINITY;
        for &u in &self.controls {
            let (j, f) = self.locate(x + self.dt * u);
            let mut own = 0.0;
            let mut rest = 0.0;
            for (k, w) in [(j, 1.0 - f), (j + 1, f)] {
                if k == i {
                    own += w;
                } else {
                    rest += w * self.values[k];
                }
            }
            let c = self.dt * (0.5 * x * x + self.gamma * u.abs());
            let v = (self.beta * rest + c) / (1.0 - self.beta * own);
            best = best.min(v);
        }
        best
    }

    pub fn value(&self, x: f64) -> f64 {
        let (j, f) = self.locate(x);
        (1.0 - f) * self.values[j] + f * self.values[j + 1]
    }

    /// Optimal control at an arbitrary state; ties go to the smaller magnitude.
    pub fn feedback(&self, x: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut arg = 0.0;
        for &u in &self.controls {
            let v = self.beta * self.value(x + self.dt * u) + self.dt * (0.5 * x * x + self.gamma * u.abs());
            if v < best - 1e-15 {
                best = v;
                arg = u;
            }
        }
        arg
    }
}
