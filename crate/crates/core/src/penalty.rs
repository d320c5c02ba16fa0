//! The mixed `ℓ^{p,q}` control penalty and the pointwise problem
//!
//! ```text
//! G(u) = Σ φ_i u_i + γ_t (Σ |u_i|^p)^{q/p},   u ∈ U
//! ```
//!
//! over box (`U_∞`) or Euclidean-ball (`U_2`) control sets. For the box the
//! minimizer is assembled from the index partition `I^-`, `I^0`, `I^+`: forced
//! zeros, plus a bang-off choice on `I^+` selected by exhaustive enumeration.
//! The ball case has no closed form and is solved by dense sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the `I^0` equality test.
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-12;

/// Largest `|I^+|` the box minimizer will enumerate (`2^cap` candidates).
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Maximum number of grid points for the sampling-based minimizers.
pub const DEFAULT_WORK_CAP: usize = 100_000_000;

/// Values closer than this (relative to the objective's natural scale) are ties.
const TIE_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyParams {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl PenaltyParams {
    pub fn new(p: f64, q: f64, gamma: f64, lambda: f64) -> Result<Self> {
        let params = Self { p, q, gamma, lambda };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { p, q, gamma, lambda } = *self;
        if !(p > 0.0 && p <= q && q <= 1.0) {
            return Err(Error::invalid(format!(
                "exponents must satisfy 0 < p <= q <= 1 (p = {p}, q = {q})"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive (got {gamma})")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive (got {lambda})")));
        }
        Ok(())
    }

    /// `‖u‖_p^q` without input validation.
    #[inline]
    pub fn quasi_norm(&self, u: &[f64]) -> f64 {
        mixed_quasi_norm(u, self.p, self.q)
    }
}

/// `(Σ |u_i|^p)^{q/p}`; zero coordinates contribute nothing.
#[inline]
pub fn mixed_quasi_norm(u: &[f64], p: f64, q: f64) -> f64 {
    let sum: f64 = u
        .iter()
        .filter(|x| **x != 0.0)
        .map(|x| if p == 1.0 { x.abs() } else { x.abs().powf(p) })
        .sum();
    if sum == 0.0 {
        0.0
    } else if p == q {
        sum
    } else {
        sum.powf(q / p)
    }
}

/// Evaluates the control penalty `‖u‖_p^q = (Σ|u_i|^p)^{q/p}`.
pub fn penalty_eval(u: &[f64], params: &PenaltyParams) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::invalid("control vector must be non-empty"));
    }
    if let Some(bad) = u.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite control coordinate {bad}")));
    }
    Ok(params.quasi_norm(u))
}

/// Exact integral of `e^{-λt}` over `[t_k, t_{k+1}]`.
pub fn weight_bk(lambda: f64, t_k: f64, t_k1: f64) -> Result<f64> {
    if !(t_k < t_k1) || !t_k.is_finite() || !t_k1.is_finite() {
        return Err(Error::InvalidInterval {
            start: t_k,
            end: t_k1,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive (got {lambda})")));
    }
    // e^{-λ t_k} (1 - e^{-λ Δ}) / λ, with expm1 for short intervals
    Ok((-lambda * t_k).exp() * -(-lambda * (t_k1 - t_k)).exp_m1() / lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    rho: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::invalid("box constraint needs at least one bound"));
        }
        if let Some(r) = rho.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!("box bounds must be positive (got {r})")));
        }
        Ok(Self { rho })
    }

    pub fn uniform(rho: f64, m: usize) -> Result<Self> {
        Self::new(vec![rho; m])
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.rho.len() && u.iter().zip(&self.rho).all(|(x, r)| x.abs() <= *r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallConstraint {
    rho: f64,
    dim: usize,
}

impl BallConstraint {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive (got {rho})")));
        }
        if dim == 0 {
            return Err(Error::invalid("ball dimension must be at least 1"));
        }
        Ok(Self { rho, dim })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The enclosing box `[-ρ, ρ]^m`, used for classification.
    pub fn bounding_box(&self) -> BoxConstraint {
        BoxConstraint {
            rho: vec![self.rho; self.dim],
        }
    }
}

/// Either admissible control set, for the brute-force oracle.
#[derive(Debug, Clone, Copy)]
pub enum Constraint<'a> {
    Box(&'a BoxConstraint),
    Ball(&'a BallConstraint),
}

impl Constraint<'_> {
    fn dim(&self) -> usize {
        match self {
            Constraint::Box(b) => b.dim(),
            Constraint::Ball(b) => b.dim(),
        }
    }

    fn axis_bound(&self, i: usize) -> f64 {
        match self {
            Constraint::Box(b) => b.rho[i],
            Constraint::Ball(b) => b.rho,
        }
    }
}

/// Partition of the control coordinates (0-based indices).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexClassification {
    pub i_minus: Vec<usize>,
    pub i_zero: Vec<usize>,
    pub i_plus: Vec<usize>,
}

impl IndexClassification {
    pub fn len(&self) -> usize {
        self.i_minus.len() + self.i_zero.len() + self.i_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear coefficients `φ_i = ⟨f_i(y), φ⟩` and the effective weight `γ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseProblem {
    phi: Vec<f64>,
    gamma_t: f64,
}

impl PointwiseProblem {
    pub fn new(phi: Vec<f64>, gamma_t: f64) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::invalid("pointwise problem needs at least one coefficient"));
        }
        if let Some(bad) = phi.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite coefficient {bad}")));
        }
        if !(gamma_t > 0.0 && gamma_t.is_finite()) {
            return Err(Error::invalid(format!(
                "effective weight gamma_t must be positive (got {gamma_t})"
            )));
        }
        Ok(Self { phi, gamma_t })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn gamma_t(&self) -> f64 {
        self.gamma_t
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    /// `G(u) = Σ φ_i u_i + γ_t ‖u‖_p^q`.
    pub fn objective(&self, u: &[f64], params: &PenaltyParams) -> f64 {
        let linear: f64 = self.phi.iter().zip(u).map(|(a, b)| a * b).sum();
        linear + self.gamma_t * params.quasi_norm(u)
    }
}

/// A minimizer together with its objective value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseMin {
    pub u: Vec<f64>,
    pub value: f64,
}

pub fn classify_indices(
    prob: &PointwiseProblem,
    bounds: &BoxConstraint,
    q: f64,
) -> Result<IndexClassification> {
    classify_indices_with_tol(prob, bounds, q, DEFAULT_CLASSIFY_TOL)
}

/// Compares `|φ_i| ρ_i^{1-q}` against `γ_t`; values within `rel_tol · γ_t`
/// of the threshold land in `I^0`.
pub fn classify_indices_with_tol(
    prob: &PointwiseProblem,
    bounds: &BoxConstraint,
    q: f64,
    rel_tol: f64,
) -> Result<IndexClassification> {
    Error::check_len("classify_indices", bounds.dim(), prob.dim())?;
    let mut out = IndexClassification::default();
    let band = rel_tol * prob.gamma_t;
    for (i, (phi, rho)) in prob.phi.iter().zip(&bounds.rho).enumerate() {
        let lhs = phi.abs() * rho.powf(1.0 - q);
        if (lhs - prob.gamma_t).abs() <= band {
            out.i_zero.push(i);
        } else if lhs < prob.gamma_t {
            out.i_minus.push(i);
        } else {
            out.i_plus.push(i);
        }
    }
    Ok(out)
}

/// Tuning knobs for [`minimize_box_with`].
#[derive(Debug, Clone, Copy)]
pub struct BoxOptions {
    pub classify_tol: f64,
    pub enumeration_cap: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            classify_tol: DEFAULT_CLASSIFY_TOL,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

pub fn minimize_box(
    prob: &PointwiseProblem,
    bounds: &BoxConstraint,
    params: &PenaltyParams,
) -> Result<PointwiseMin> {
    minimize_box_with(prob, bounds, params, &BoxOptions::default())
}

/// Global minimizer of `G` over the box via the index-set structure.
///
/// `I^-` coordinates are zero. With `I^+` non-empty, `I^0` is zeroed and every
/// sign-consistent bang-off pattern on `I^+` is scored. With `I^+` empty, `q < 1`
/// admits single bangs on `I^0`; `q = 1` returns the sparsest point, zero.
pub fn minimize_box_with(
    prob: &PointwiseProblem,
    bounds: &BoxConstraint,
    params: &PenaltyParams,
    opts: &BoxOptions,
) -> Result<PointwiseMin> {
    let cls = classify_indices_with_tol(prob, bounds, params.q, opts.classify_tol)?;
    let m = prob.dim();
    let bang = |i: usize| -bounds.rho[i] * prob.phi[i].signum();
    let tie_tol = TIE_RTOL * objective_scale(prob, bounds.rho(), params);

    let mut best = Candidate::zero(m);
    let mut u = vec![0.0; m];

    if !cls.i_plus.is_empty() {
        let active = &cls.i_plus;
        if active.len() > opts.enumeration_cap {
            return Err(Error::Capacity {
                what: "bang-off enumeration over I^+",
                requested: active.len() as f64,
                cap: opts.enumeration_cap as f64,
                hint: Some("use brute_force_min for large instances".into()),
            });
        }
        for mask in 1u64..(1u64 << active.len()) {
            for (bit, &i) in active.iter().enumerate() {
                u[i] = if mask >> bit & 1 == 1 { bang(i) } else { 0.0 };
            }
            let cand = Candidate::new(&u, prob.objective(&u, params));
            if cand.beats(&best, tie_tol) {
                best = cand;
            }
        }
    } else if params.q < 1.0 {
        for &i in &cls.i_zero {
            u.iter_mut().for_each(|x| *x = 0.0);
            u[i] = bang(i);
            let cand = Candidate::new(&u, prob.objective(&u, params));
            if cand.beats(&best, tie_tol) {
                best = cand;
            }
        }
    }

    Ok(best.into_min())
}

/// Dense-sampling minimizer of `G` over the Euclidean ball `‖u‖_2 ≤ ρ`.
///
/// Every point of a product grid inside the ball is scored, together with its
/// radial projection onto the sphere, followed by a shrinking pattern search on
/// the sphere around the incumbent. `G` is concave along rays from the origin,
/// so whenever the minimum is negative the result lies on the sphere.
pub fn minimize_ball(
    prob: &PointwiseProblem,
    ball: &BallConstraint,
    params: &PenaltyParams,
    resolution: usize,
) -> Result<PointwiseMin> {
    Error::check_len("minimize_ball", ball.dim(), prob.dim())?;
    if resolution < 2 {
        return Err(Error::invalid(format!(
            "ball sampling needs at least 2 points per axis (got {resolution})"
        )));
    }
    let m = ball.dim();
    let work = (resolution as f64).powi(m as i32);
    if work > DEFAULT_WORK_CAP as f64 / 10.0 {
        return Err(Error::Capacity {
            what: "ball sampling grid",
            requested: work,
            cap: DEFAULT_WORK_CAP as f64 / 10.0,
            hint: None,
        });
    }
    let rho = ball.rho();
    let tie_tol = TIE_RTOL * objective_scale(prob, &vec![rho; m], params);
    let axis = linspace(-rho, rho, resolution);

    let mut best = Candidate::zero(m);
    let mut u = vec![0.0; m];
    let mut idx = vec![0usize; m];
    let consider = |best: &mut Candidate, v: &[f64]| {
        let cand = Candidate::new(v, prob.objective(v, params));
        if cand.beats(best, tie_tol) {
            *best = cand;
        }
    };
    loop {
        for (k, &j) in idx.iter().enumerate() {
            u[k] = axis[j];
        }
        let norm = l2(&u);
        if norm > 0.0 {
            if norm <= rho {
                consider(&mut best, &u);
            }
            let projected: Vec<f64> = u.iter().map(|x| x * rho / norm).collect();
            consider(&mut best, &projected);
        }
        if !advance(&mut idx, resolution) {
            break;
        }
    }

    // the sparse points of the sphere, whatever the sampling
    for i in 0..m {
        for sign in [-1.0, 1.0] {
            let mut axis_point = vec![0.0; m];
            axis_point[i] = sign * rho;
            consider(&mut best, &axis_point);
        }
    }

    // pattern search on the sphere
    if best.nnz > 0 && m > 1 {
        let mut step = 2.0 * rho / (resolution - 1) as f64;
        let floor = 1e-12 * rho;
        while step > floor {
            let mut improved = false;
            for i in 0..m {
                for sign in [1.0, -1.0] {
                    let mut trial = best.u.clone();
                    trial[i] += sign * step;
                    let norm = l2(&trial);
                    if norm == 0.0 {
                        continue;
                    }
                    trial.iter_mut().for_each(|x| *x *= rho / norm);
                    let cand = Candidate::new(&trial, prob.objective(&trial, params));
                    if cand.value < best.value - tie_tol {
                        best = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }

    Ok(best.into_min())
}

/// Exhaustive grid search of `G` over the constraint set.
///
/// `resolution` points per axis (odd, so zero is on the grid); ties are broken
/// exactly as in [`minimize_box`]. Intended as an independent oracle.
pub fn brute_force_min(
    prob: &PointwiseProblem,
    constraint: Constraint<'_>,
    params: &PenaltyParams,
    resolution: usize,
) -> Result<PointwiseMin> {
    let m = constraint.dim();
    Error::check_len("brute_force_min", m, prob.dim())?;
    if resolution < 3 || resolution.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "brute-force resolution must be odd and >= 3 (got {resolution})"
        )));
    }
    let work = (resolution as f64).powi(m as i32);
    if work > DEFAULT_WORK_CAP as f64 {
        return Err(Error::Capacity {
            what: "brute-force grid",
            requested: work,
            cap: DEFAULT_WORK_CAP as f64,
            hint: None,
        });
    }

    let axes: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let r = constraint.axis_bound(i);
            linspace(-r, r, resolution)
        })
        .collect();
    let p = params.p;
    let powers: Vec<Vec<f64>> = axes
        .iter()
        .map(|ax| ax.iter().map(|x| if *x == 0.0 { 0.0 } else { x.abs().powf(p) }).collect())
        .collect();
    let rhos: Vec<f64> = (0..m).map(|i| constraint.axis_bound(i)).collect();
    let tie_tol = TIE_RTOL * objective_scale(prob, &rhos, params);
    let ball_r2 = match constraint {
        Constraint::Ball(b) => Some(b.rho() * b.rho() * (1.0 + 1e-12)),
        Constraint::Box(_) => None,
    };

    let mut best = Candidate::zero(m);
    let mut idx = vec![0usize; m];
    let mut u = vec![0.0; m];
    loop {
        let mut sum_p = 0.0;
        let mut linear = 0.0;
        let mut r2 = 0.0;
        for k in 0..m {
            let x = axes[k][idx[k]];
            u[k] = x;
            sum_p += powers[k][idx[k]];
            linear += prob.phi[k] * x;
            r2 += x * x;
        }
        let feasible = ball_r2.is_none_or(|cap| r2 <= cap);
        if feasible {
            let pen = if sum_p == 0.0 {
                0.0
            } else if params.p == params.q {
                sum_p
            } else {
                sum_p.powf(params.q / params.p)
            };
            let value = linear + prob.gamma_t * pen;
            // cheap reject before building the candidate
            if value <= best.value + tie_tol {
                let cand = Candidate::new(&u, value);
                if cand.beats(&best, tie_tol) {
                    best = cand;
                }
            }
        }
        if !advance(&mut idx, resolution) {
            break;
        }
    }
    Ok(best.into_min())
}

/// Natural magnitude of `G` on the constraint set, used to scale tie tolerances.
fn objective_scale(prob: &PointwiseProblem, rho: &[f64], params: &PenaltyParams) -> f64 {
    let linear: f64 = prob.phi.iter().zip(rho).map(|(a, r)| a.abs() * r).sum();
    (linear + prob.gamma_t * params.quasi_norm(rho)).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
struct Candidate {
    u: Vec<f64>,
    value: f64,
    nnz: usize,
}

impl Candidate {
    fn zero(m: usize) -> Self {
        Self {
            u: vec![0.0; m],
            value: 0.0,
            nnz: 0,
        }
    }

    fn new(u: &[f64], value: f64) -> Self {
        Self {
            u: u.to_vec(),
            value,
            nnz: u.iter().filter(|x| **x != 0.0).count(),
        }
    }

    fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.u.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i)
    }

    /// Lower value wins; within `tie_tol`, fewer non-zeros, then the support
    /// with the lowest indices.
    fn beats(&self, other: &Candidate, tie_tol: f64) -> bool {
        if self.value < other.value - tie_tol {
            return true;
        }
        if self.value > other.value + tie_tol {
            return false;
        }
        match self.nnz.cmp(&other.nnz) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => self.support().lt(other.support()),
        }
    }

    fn into_min(self) -> PointwiseMin {
        PointwiseMin {
            u: self.u,
            value: self.value,
        }
    }
}

/// `n` equispaced points on `[a, b]`; the endpoints are hit exactly and, for odd
/// `n` on a symmetric interval, so is the midpoint.
pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    let last = (n - 1) as f64;
    (0..n)
        .map(|j| {
            if 2 * j + 1 == n && a == -b {
                0.0
            } else {
                let s = j as f64 / last;
                a * (1.0 - s) + b * s
            }
        })
        .collect()
}

/// Odometer increment over `[0, n)^m`, first index fastest.
pub(crate) fn advance(idx: &mut [usize], n: usize) -> bool {
    for k in idx.iter_mut() {
        *k += 1;
        if *k < n {
            return true;
        }
        *k = 0;
    }
    false
}

fn l2(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}
