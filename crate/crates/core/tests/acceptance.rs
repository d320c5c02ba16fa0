//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{double_well, eikonal, Bench, Oracle1d, GAMMA, LAMBDA, RHO};
use sparse_hjb::grid::ScalarField;
use sparse_hjb::hjb::{
    simulate_closed_loop, solve, sparsity_metrics, BellmanOperator, SolveResult, SolverMode,
};
use sparse_hjb::penalty::{
    brute_force_min, classify_indices, minimize_ball, minimize_box, BallConstraint, BoxConstraint,
    Constraint, PenaltyParams, PointwiseProblem,
};
use sparse_hjb::pmp::{forward_backward_sweep, verify_interval_optimality, LinearSystem, TimeGrid, DEFAULT_SUBSTEPS};

// Tolerances and sizes, pinned.
const A1_INSTANCES: usize = 1200;
const A1_VALUE_TOL: f64 = 1e-9;
const A1_RESOLUTION: [usize; 3] = [401, 101, 41];
const A1_TIME_LIMIT_S: f64 = 120.0;
const A2_INSTANCES: usize = 240;
const A2_RESOLUTION: usize = 41;
const A3_NODES: usize = 101;
const A3_CONTROL_RESOLUTION: usize = 21;
const A3_ZERO_AGREEMENT: f64 = 0.98;
const A3_ORACLE_AGREEMENT: f64 = 0.95;
const A3_ORACLE_NODES: usize = 2001;
const A4_DOUBLE_WELL_NODES: usize = 61;
const A4_P_VALUES: [f64; 3] = [1.0, 0.6, 0.2];
const A5_PAIRS: usize = 100;
const A5_SLACK: f64 = 1e-12;
const A5_VI_NODES: usize = 41;
const A5_VI_CONTROL_RESOLUTION: usize = 5;
const A6_X0: [f64; 2] = [0.8, 0.05];
const A6_DELTA: f64 = 0.1;
const A6_REL_TOL: f64 = 0.05;
const A6_ORACLE_RESOLUTION: usize = 101;
const A7_SAMPLES: usize = 20;
const A7_REL_TOL: f64 = 0.05;
const A7_H_FACTOR: f64 = 10.0;
const A7_DIAM_SCALE: f64 = 1.0;
const ROLLOUT_DT: f64 = 0.01;
const ROLLOUT_T_MAX: f64 = 60.0;
const SEED: u64 = 20_240_611;

type Check = (bool, String);
type Criterion = Box<dyn Fn(&Shared) -> Check>;

fn main() {
    let started = Instant::now();
    let shared = Shared::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("A1", Box::new(|_| a1())),
        ("A2", Box::new(|_| a2())),
        ("A3", Box::new(a3)),
        ("A4", Box::new(a4)),
        ("A5", Box::new(|_| a5())),
        ("A6", Box::new(a6)),
        ("A7", Box::new(a7)),
        ("A8", Box::new(|_| a8())),
    ];
    let mut failed = 0;
    for (id, f) in &criteria {
        let t = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(|| f(&shared)))
            .unwrap_or_else(|e| (false, format!("panicked: {}", panic_text(&e))));
        if !ok {
            failed += 1;
        }
        println!(
            "{id} {} {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

/// The eikonal benchmark solved once on the full grid.
struct Shared {
    bench: Bench,
    result: SolveResult,
}

impl Shared {
    fn new() -> Self {
        let bench = eikonal(A3_NODES, A3_CONTROL_RESOLUTION, 1.0);
        let result = bench.solve();
        Self { bench, result }
    }
}

fn a1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for n in 0..A1_INSTANCES {
        let m = n % 3 + 1;
        let p = rng.gen_range(0.1..=1.0);
        let q = rng.gen_range(p..=1.0);
        let gamma_t = rng.gen_range(0.05..=1.0);
        let phi: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let rho: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..=1.0)).collect();
        let params = PenaltyParams::new(p, q, 1.0, 1.0).unwrap();
        let bounds = BoxConstraint::new(rho.clone()).unwrap();
        let prob = PointwiseProblem::new(phi, gamma_t).unwrap();
        let res = A1_RESOLUTION[m - 1];
        let fast = minimize_box(&prob, &bounds, &params).unwrap();
        let oracle = brute_force_min(&prob, Constraint::Box(&bounds), &params, res).unwrap();
        let gap = fast.value - oracle.value;
        worst_gap = worst_gap.max(gap);
        if gap > A1_VALUE_TOL {
            failures.push(format!("#{n}: gap {gap:e}"));
        }
        let cls = classify_indices(&prob, &bounds, q).unwrap();
        let u = &oracle.u;
        if cls.i_minus.iter().any(|&i| u[i] != 0.0) {
            failures.push(format!("#{n}: I^- coordinate nonzero in {u:?}"));
        }
        for i in 0..m {
            let step = 2.0 * rho[i] / (res - 1) as f64;
            if u[i] != 0.0 && (u[i].abs() - rho[i]).abs() > step {
                failures.push(format!("#{n}: coordinate {i} = {} is not bang-off", u[i]));
            }
        }
        if !cls.i_plus.is_empty() && cls.i_plus.iter().all(|&i| u[i] == 0.0) {
            failures.push(format!("#{n}: I^+ non-empty but no active coordinate"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs > A1_TIME_LIMIT_S {
        failures.push(format!("runtime {secs:.1}s exceeds {A1_TIME_LIMIT_S}s"));
    }
    (
        failures.is_empty(),
        format!(
            "{A1_INSTANCES} instances, worst minimize_box - brute_force gap {worst_gap:.2e} (tol {A1_VALUE_TOL:e}); {} violations{}",
            failures.len(),
            first(&failures)
        ),
    )
}

fn a2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    while done < A2_INSTANCES {
        let m = 2 + done % 2;
        let p = rng.gen_range(0.1..=1.0);
        let q = rng.gen_range(p..=1.0);
        let gamma_t = rng.gen_range(0.05..=1.0);
        let rho = rng.gen_range(0.2..=1.0);
        let phi: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let prob = PointwiseProblem::new(phi, gamma_t).unwrap();
        let ball = BallConstraint::new(rho, m).unwrap();
        let cls = classify_indices(&prob, &ball.bounding_box(), q).unwrap();
        if cls.i_plus.len() < 2 {
            continue;
        }
        let params = PenaltyParams::new(p, q, 1.0, 1.0).unwrap();
        let res = if m == 2 { 4 * A2_RESOLUTION - 3 } else { A2_RESOLUTION };
        let step = 2.0 * rho / (res - 1) as f64;
        let out = minimize_ball(&prob, &ball, &params, res).unwrap();
        let norm = out.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dev = (norm - rho).abs();
        worst = worst.max(dev / step);
        if dev > 2.0 * step {
            failures.push(format!("#{done}: |‖u‖₂ − ρ| = {dev:e} > {:e}", 2.0 * step));
        }
        done += 1;
    }
    (
        failures.is_empty(),
        format!(
            "{A2_INSTANCES} instances with |I+| >= 2, worst |‖u‖₂ − ρ| = {worst:.2e} sampling steps (tol 2){}",
            first(&failures)
        ),
    )
}

fn a3(s: &Shared) -> Check {
    let b = &s.bench;
    let fb = &s.result.policy;
    let h = b.grid.max_spacing();
    let band = GAMMA * LAMBDA;
    let oracle = Oracle1d::solve(A3_ORACLE_NODES, A3_CONTROL_RESOLUTION, RHO, GAMMA, LAMBDA);
    let (mut zero_total, mut zero_agree, mut oracle_agree) = (0usize, 0usize, 0usize);
    for (i, x) in b.grid.node_iter() {
        let u = fb.get(i);
        let is_zero = u.iter().all(|v| v.abs() <= b.cfg.active_tol);
        let sup = x[0].abs().max(x[1].abs());
        if (sup - band).abs() > h {
            zero_total += 1;
            if is_zero == (sup <= band) {
                zero_agree += 1;
            }
        }
        let expected = [oracle.feedback(x[0]), oracle.feedback(x[1])];
        if u.iter().zip(&expected).all(|(a, e)| (a - e).abs() <= 1e-9) {
            oracle_agree += 1;
        }
    }
    let zero_frac = zero_agree as f64 / zero_total as f64;
    let oracle_frac = oracle_agree as f64 / b.grid.len() as f64;
    let m = sparsity_metrics(fb, b.cfg.active_tol);
    (
        zero_frac >= A3_ZERO_AGREEMENT && oracle_frac >= A3_ORACLE_AGREEMENT,
        format!(
            "zero region agreement {:.2}% (need {:.0}%, {} nodes outside the one-cell band), 1-D oracle agreement {:.2}% (need {:.0}%), frac_zero {:.4}",
            100.0 * zero_frac,
            100.0 * A3_ZERO_AGREEMENT,
            zero_total,
            100.0 * oracle_frac,
            100.0 * A3_ORACLE_AGREEMENT,
            m.frac_zero
        ),
    )
}

fn switching_trend(name: &str, make: impl Fn(f64) -> Bench, p1: Option<&SolveResult>) -> (bool, String) {
    let mut fracs = Vec::new();
    for p in A4_P_VALUES {
        let b = make(p);
        let frac = match p1 {
            Some(r) if p == 1.0 => sparsity_metrics(&r.policy, b.cfg.active_tol).frac_switching,
            _ => sparsity_metrics(&b.solve().policy, b.cfg.active_tol).frac_switching,
        };
        fracs.push(frac);
    }
    let ok = fracs.windows(2).all(|w| w[1] >= w[0]);
    let text: Vec<String> = A4_P_VALUES
        .iter()
        .zip(&fracs)
        .map(|(p, f)| format!("p={p}: {f:.4}"))
        .collect();
    (ok, format!("{name} frac_switching {}", text.join(", ")))
}

fn a4(s: &Shared) -> Check {
    let (ok_e, text_e) = switching_trend("eikonal", |p| eikonal(A3_NODES, A3_CONTROL_RESOLUTION, p), Some(&s.result));
    let (ok_d, text_d) = switching_trend("double well", |p| double_well(A4_DOUBLE_WELL_NODES, A3_CONTROL_RESOLUTION, p), None);
    (ok_e && ok_d, format!("{text_e}; {text_d}"))
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = rng.gen_range(0.1..5.0);
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn operator_properties(b: &Bench, rng: &mut ChaCha8Rng) -> (usize, usize, f64) {
    let op = BellmanOperator::new(&b.grid, &b.sys, &b.cost, &b.bounds, &b.cfg).unwrap();
    let n = b.grid.len();
    let field = |v: Vec<f64>| ScalarField::new(b.grid.clone(), v).unwrap();
    let (mut contraction_bad, mut monotone_bad) = (0, 0);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..A5_PAIRS {
        let v = field(random_field(rng, n));
        let w = field(random_field(rng, n));
        let (tv, _) = op.apply(&v).unwrap();
        let (tw, _) = op.apply(&w).unwrap();
        let lhs = tv.max_abs_diff(&tw);
        let rhs = op.discount() * v.max_abs_diff(&w);
        worst_ratio = worst_ratio.max(lhs / v.max_abs_diff(&w));
        if lhs > rhs + A5_SLACK {
            contraction_bad += 1;
        }
        let sparse = rng.gen_bool(0.5);
        let raised = field(
            v.values()
                .iter()
                .map(|x| x + if sparse && rng.gen_bool(0.9) { 0.0 } else { rng.gen_range(0.0..1.0) })
                .collect(),
        );
        let (tr, _) = op.apply(&raised).unwrap();
        if tv.values().iter().zip(tr.values()).any(|(a, b)| a > b) {
            monotone_bad += 1;
        }
    }
    (contraction_bad, monotone_bad, worst_ratio / op.discount())
}

fn a5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let eik = eikonal(A5_VI_NODES, A5_VI_CONTROL_RESOLUTION, 0.5);
    let dw = double_well(31, A5_VI_CONTROL_RESOLUTION, 0.5);
    let (c1, m1, r1) = operator_properties(&eik, &mut rng);
    let (c2, m2, r2) = operator_properties(&dw, &mut rng);

    let bench = eikonal(A5_VI_NODES, A5_VI_CONTROL_RESOLUTION, 1.0);
    let v0 = ScalarField::zeros(bench.grid.clone());
    let mut cfg = bench.cfg.clone();
    cfg.mode = SolverMode::ValueIteration;
    let vi = solve(&v0, &bench.sys, &bench.cost, &bench.bounds, &cfg).unwrap();
    cfg.mode = SolverMode::PolicyIteration;
    let pi = solve(&v0, &bench.sys, &bench.cost, &bench.bounds, &cfg).unwrap();
    let gap = vi.value.max_abs_diff(&pi.value);
    let ok = c1 + c2 + m1 + m2 == 0 && gap <= 10.0 * cfg.tol;
    (
        ok,
        format!(
            "contraction violations {}/{} (worst ratio to e^(-λdt): {:.6}), monotonicity violations {}/{}; VI vs PI sup gap {gap:.2e} (tol {:.0e}), VI sweeps {}, PI outer iterations {}",
            c1 + c2,
            2 * A5_PAIRS,
            r1.max(r2),
            m1 + m2,
            2 * A5_PAIRS,
            10.0 * cfg.tol,
            vi.iterations,
            pi.iterations
        ),
    )
}

fn a6(s: &Shared) -> Check {
    let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
    let b = &s.bench;
    // Smallest horizon with e^{-λT} < 1e-4, rounded up to whole intervals.
    let horizon = ((1e4f64).ln() / LAMBDA / A6_DELTA).ceil() * A6_DELTA;
    let grid = TimeGrid::uniform(A6_DELTA, horizon).unwrap();
    let sweep = forward_backward_sweep(&sys, &grid, &b.cost, &b.bounds, &A6_X0, 1000).unwrap();
    let report = verify_interval_optimality(
        &sweep.controls,
        &sys,
        &grid,
        &b.cost,
        &b.bounds,
        &A6_X0,
        A6_ORACLE_RESOLUTION,
        DEFAULT_SUBSTEPS,
    )
    .unwrap();
    let traj = simulate_closed_loop(
        &s.result.value,
        &b.sys,
        &b.cost,
        &b.bounds,
        &b.cfg,
        &A6_X0,
        ROLLOUT_DT,
        ROLLOUT_T_MAX,
        0.0,
    )
    .unwrap();
    let rollout = traj.discounted_cost();
    let rel = (sweep.cost - rollout).abs() / rollout;
    (
        sweep.converged && report.passed() && rel <= A6_REL_TOL,
        format!(
            "T={horizon:.1} (e^(-λT)={:.1e}), sweep converged={} in {} iterations, interval check max slack {:.1e} ({} violations), J^Δ={:.5} vs rollout {:.5}: {:.2}% (tol {:.0}%)",
            (-LAMBDA * horizon).exp(),
            sweep.converged,
            sweep.history.len(),
            report.max_slack(),
            report.violations.len(),
            sweep.cost,
            rollout,
            100.0 * rel,
            100.0 * A6_REL_TOL
        ),
    )
}

fn a7(s: &Shared) -> Check {
    let b = &s.bench;
    let h = b.grid.max_spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut failures = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for n in 0..A7_SAMPLES {
        let x0 = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
        let v = s.result.value.interpolate(&x0);
        let traj = simulate_closed_loop(&s.result.value, &b.sys, &b.cost, &b.bounds, &b.cfg, &x0, ROLLOUT_DT, ROLLOUT_T_MAX, 0.0).unwrap();
        let err = (traj.discounted_cost() - v).abs();
        let tol = (A7_REL_TOL * v).max(A7_H_FACTOR * h * A7_DIAM_SCALE);
        worst_rel = worst_rel.max(err / v);
        if err > tol {
            failures.push(format!("#{n} x0={x0:?}: |{:.5} − {v:.5}| > {tol:.4}", traj.discounted_cost()));
        }
    }
    (
        failures.is_empty(),
        format!(
            "{A7_SAMPLES} initial states, worst relative gap {:.2}% (tol max(5%·V, 10h = {:.2})){}",
            100.0 * worst_rel,
            A7_H_FACTOR * h * A7_DIAM_SCALE,
            first(&failures)
        ),
    )
}

fn a8() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("eikonal.toml");
    std::fs::write(
        &config,
        r#"
[system]
kind = "eikonal"

[domain]
lower = [-1.0, -1.0]
upper = [1.0, 1.0]
nodes = [41, 41]

[penalty]
p = 0.6
q = 1.0
gamma = 1.0
lambda = 0.2

[control]
rho = 0.5

[cost]
target = [0.0, 0.0]

[solver]
control_resolution = 11
"#,
    )
    .unwrap();
    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_sparse-hjb"))
            .args(["solve", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    let (one, two) = (dir.path().join("one"), dir.path().join("two"));
    run(&one);
    run(&two);
    let mut same = Vec::new();
    for file in ["value.csv", "feedback.csv"] {
        let a = std::fs::read(one.join(file)).unwrap();
        let b = std::fs::read(two.join(file)).unwrap();
        same.push((file, a == b && !a.is_empty(), a.len()));
    }
    let ok = same.iter().all(|(_, s, _)| *s);
    let text: Vec<String> = same
        .iter()
        .map(|(f, s, n)| format!("{f} {} ({n} bytes)", if *s { "identical" } else { "differs" }))
        .collect();
    (ok, format!("two solve runs: {}", text.join(", ")))
}

fn first(failures: &[String]) -> String {
    failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
}
