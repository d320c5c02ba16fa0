//! Control-affine systems `ẏ = f_0(y) + Σ_i f_i(y) u_i`, the benchmark
//! systems, an RK4 integrator with sample-and-hold controls, and the running
//! cost `½‖y − y_d‖² + γ‖u‖_p^q`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::PenaltyParams;

/// Writes a vector field evaluated at the first argument into the second.
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct ControlAffineSystem {
    name: String,
    state_dim: usize,
    control_dim: usize,
    drift: VectorFn,
    fields: Vec<VectorFn>,
    /// Documentation only; never used in computations.
    pub lipschitz_hint: Option<f64>,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .finish_non_exhaustive()
    }
}

/// Drift and control fields frozen at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTerms {
    pub drift: Vec<f64>,
    /// Field `i` occupies `fields[i*d..(i+1)*d]`.
    pub fields: Vec<f64>,
}

impl AffineTerms {
    pub fn state_dim(&self) -> usize {
        self.drift.len()
    }

    pub fn field(&self, i: usize) -> &[f64] {
        let d = self.drift.len();
        &self.fields[i * d..(i + 1) * d]
    }

    /// `f_0 + Σ f_i u_i` into `out`.
    #[inline]
    pub fn rhs_into(&self, u: &[f64], out: &mut [f64]) {
        let d = self.drift.len();
        out.copy_from_slice(&self.drift);
        for (i, ui) in u.iter().enumerate() {
            if *ui != 0.0 {
                let f = &self.fields[i * d..(i + 1) * d];
                for (o, fi) in out.iter_mut().zip(f) {
                    *o += fi * ui;
                }
            }
        }
    }
}

impl ControlAffineSystem {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        drift: VectorFn,
        fields: Vec<VectorFn>,
    ) -> Result<Self> {
        if state_dim == 0 || fields.is_empty() {
            return Err(Error::invalid("a control system needs d >= 1 and m >= 1"));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            control_dim: fields.len(),
            drift,
            fields,
            lipschitz_hint: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Evaluates `f_0(x)` and every `f_i(x)`, failing on non-finite output.
    pub fn terms(&self, x: &[f64]) -> Result<AffineTerms> {
        Error::check_len("state", self.state_dim, x.len())?;
        let d = self.state_dim;
        let mut drift = vec![0.0; d];
        (self.drift)(x, &mut drift);
        let mut fields = vec![0.0; d * self.control_dim];
        for (i, f) in self.fields.iter().enumerate() {
            f(x, &mut fields[i * d..(i + 1) * d]);
        }
        if drift.iter().chain(&fields).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("{} vector fields", self.name),
                state: x.to_vec(),
            });
        }
        Ok(AffineTerms { drift, fields })
    }
}

/// `f_0(x) + Σ_i f_i(x) u_i`.
pub fn eval_rhs(sys: &ControlAffineSystem, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("control", sys.control_dim, u.len())?;
    let terms = sys.terms(x)?;
    let mut out = vec![0.0; sys.state_dim];
    terms.rhs_into(u, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: format!("{} right-hand side", sys.name),
            state: x.to_vec(),
        });
    }
    Ok(out)
}

/// The benchmark systems.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinSystem {
    /// `ẋ_i = u_i` in `dim` dimensions.
    Eikonal { dim: usize },
    /// `ẋ = v`, `v̇ = -(1 + u_1) v + x - x³ + u_2`.
    DoubleWell,
    /// As [`BuiltinSystem::DoubleWell`] with the forcing entering as `u_2 x`.
    DoubleWellBilinear,
    /// `ẏ = A y + B u`.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
}

impl BuiltinSystem {
    /// Looks a system up by name; `linear` must be built with [`BuiltinSystem::Linear`].
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "eikonal" => Ok(BuiltinSystem::Eikonal { dim: 2 }),
            "double_well" => Ok(BuiltinSystem::DoubleWell),
            "double_well_bilinear" => Ok(BuiltinSystem::DoubleWellBilinear),
            "linear" => Err(Error::invalid("the linear system needs explicit A and B matrices")),
            other => Err(Error::invalid(format!(
                "unknown system '{other}' (expected eikonal, double_well, double_well_bilinear or linear)"
            ))),
        }
    }

    pub fn build(&self) -> Result<ControlAffineSystem> {
        match self {
            BuiltinSystem::Eikonal { dim } => {
                let d = *dim;
                if d == 0 {
                    return Err(Error::invalid("eikonal dimension must be >= 1"));
                }
                let drift: VectorFn = Arc::new(|_x, out| out.fill(0.0));
                let fields = (0..d)
                    .map(|i| -> VectorFn {
                        Arc::new(move |_x, out: &mut [f64]| {
                            out.fill(0.0);
                            out[i] = 1.0;
                        })
                    })
                    .collect();
                let mut sys = ControlAffineSystem::new("eikonal", d, drift, fields)?;
                sys.lipschitz_hint = Some(0.0);
                Ok(sys)
            }
            BuiltinSystem::DoubleWell | BuiltinSystem::DoubleWellBilinear => {
                let bilinear = matches!(self, BuiltinSystem::DoubleWellBilinear);
                let drift: VectorFn = Arc::new(|x, out| {
                    out[0] = x[1];
                    out[1] = -x[1] + x[0] - x[0] * x[0] * x[0];
                });
                let damping: VectorFn = Arc::new(|x, out| {
                    out[0] = 0.0;
                    out[1] = -x[1];
                });
                let forcing: VectorFn = if bilinear {
                    Arc::new(|x, out| {
                        out[0] = 0.0;
                        out[1] = x[0];
                    })
                } else {
                    Arc::new(|_x, out| {
                        out[0] = 0.0;
                        out[1] = 1.0;
                    })
                };
                let name = if bilinear { "double_well_bilinear" } else { "double_well" };
                ControlAffineSystem::new(name, 2, drift, vec![damping, forcing])
            }
            BuiltinSystem::Linear { a, b } => {
                let d = a.nrows();
                if a.ncols() != d {
                    return Err(Error::ShapeMismatch {
                        context: "linear system A (columns)",
                        expected: d,
                        found: a.ncols(),
                    });
                }
                Error::check_len("linear system B (rows)", d, b.nrows())?;
                if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("linear system matrices must be finite"));
                }
                let a = a.clone();
                let drift: VectorFn = Arc::new(move |x, out| {
                    for (r, o) in out.iter_mut().enumerate() {
                        *o = (0..x.len()).map(|c| a[(r, c)] * x[c]).sum();
                    }
                });
                let fields = (0..b.ncols())
                    .map(|i| -> VectorFn {
                        let col: Vec<f64> = b.column(i).iter().copied().collect();
                        Arc::new(move |_x, out: &mut [f64]| out.copy_from_slice(&col))
                    })
                    .collect();
                ControlAffineSystem::new("linear", d, drift, fields)
            }
        }
    }
}

/// One classical RK4 step with `u` held constant.
pub fn step_rk4(sys: &ControlAffineSystem, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive (got {dt})")));
    }
    let d = x.len();
    let k1 = eval_rhs(sys, x, u)?;
    let stage = |k: &[f64], h: f64| -> Vec<f64> { (0..d).map(|i| x[i] + h * k[i]).collect() };
    let k2 = eval_rhs(sys, &stage(&k1, 0.5 * dt), u)?;
    let k3 = eval_rhs(sys, &stage(&k2, 0.5 * dt), u)?;
    let k4 = eval_rhs(sys, &stage(&k3, dt), u)?;
    let next: Vec<f64> = (0..d)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "RK4 step".into(),
            state: x.to_vec(),
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub target: Vec<f64>,
    pub penalty: PenaltyParams,
}

impl CostParams {
    pub fn new(target: Vec<f64>, penalty: PenaltyParams) -> Result<Self> {
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("target state must be finite"));
        }
        penalty.validate()?;
        Ok(Self { target, penalty })
    }

    /// `½‖x − y_d‖²`.
    #[inline]
    pub fn state_cost(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    pub fn distance_to_target(&self, x: &[f64]) -> f64 {
        (2.0 * self.state_cost(x)).sqrt()
    }
}

/// `½‖x − y_d‖² + γ‖u‖_p^q`.
pub fn running_cost(x: &[f64], u: &[f64], cost: &CostParams) -> Result<f64> {
    Error::check_len("running cost state", cost.target.len(), x.len())?;
    Ok(cost.state_cost(x) + cost.penalty.gamma * cost.penalty.quasi_norm(u))
}

/// A sampled closed-loop rollout; `controls[k]` is held on `[times[k], times[k+1])`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub running_costs: Vec<f64>,
    /// Discounted cost accumulated before sample `k`.
    pub cumulative_cost: Vec<f64>,
    /// Sample indices whose state had to be projected back into the domain.
    pub clamp_events: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn discounted_cost(&self) -> f64 {
        self.cumulative_cost.last().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dw() -> ControlAffineSystem {
        BuiltinSystem::DoubleWell.build().unwrap()
    }

    #[test]
    fn eikonal_rhs_is_control() {
        let sys = BuiltinSystem::Eikonal { dim: 2 }.build().unwrap();
        assert_eq!(eval_rhs(&sys, &[0.3, -0.7], &[0.1, 0.2]).unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn double_well_equilibria() {
        let sys = dw();
        assert_eq!(eval_rhs(&sys, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(eval_rhs(&sys, &[-1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        for x in [[1.0, 0.0], [-1.0, 0.0]] {
            let next = step_rk4(&sys, &x, &[0.0, 0.0], 0.05).unwrap();
            assert_eq!(next, x.to_vec());
        }
    }

    #[test]
    fn double_well_field_layout() {
        let sys = dw();
        let t = sys.terms(&[0.5, 0.7]).unwrap();
        assert_eq!(t.field(0), &[0.0, -0.7]);
        assert_eq!(t.field(1), &[0.0, 1.0]);
        let bl = BuiltinSystem::DoubleWellBilinear.build().unwrap();
        let t = bl.terms(&[0.5, 0.7]).unwrap();
        assert_eq!(t.field(1), &[0.0, 0.5]);
        // bilinear forcing vanishes at x = 0
        let a = eval_rhs(&bl, &[0.0, 0.3], &[0.2, 0.0]).unwrap();
        let b = eval_rhs(&bl, &[0.0, 0.3], &[0.2, 17.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_control_gives_drift() {
        let sys = dw();
        let x = [0.4, -1.3];
        let t = sys.terms(&x).unwrap();
        assert_eq!(eval_rhs(&sys, &x, &[0.0, 0.0]).unwrap(), t.drift);
    }

    #[test]
    fn linear_identity_matches_eikonal() {
        let lin = BuiltinSystem::Linear {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::identity(2, 2),
        }
        .build()
        .unwrap();
        let eik = BuiltinSystem::Eikonal { dim: 2 }.build().unwrap();
        for (x, u) in [([0.1, 0.2], [0.3, -0.4]), ([-0.9, 0.5], [0.0, 0.5])] {
            assert_eq!(eval_rhs(&lin, &x, &u).unwrap(), eval_rhs(&eik, &x, &u).unwrap());
        }
    }

    #[test]
    fn builtin_errors() {
        assert!(BuiltinSystem::from_name("pendulum").is_err());
        assert!(BuiltinSystem::from_name("linear").is_err());
        let bad = BuiltinSystem::Linear {
            a: DMatrix::zeros(2, 3),
            b: DMatrix::zeros(2, 1),
        };
        assert!(bad.build().is_err());
        let bad = BuiltinSystem::Linear {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(3, 1),
        };
        assert!(bad.build().is_err());
        let sys = dw();
        assert!(eval_rhs(&sys, &[0.0], &[0.0, 0.0]).is_err());
        assert!(eval_rhs(&sys, &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn non_finite_field_is_reported() {
        let drift: VectorFn = Arc::new(|x, out| out[0] = 1.0 / x[0]);
        let field: VectorFn = Arc::new(|_x, out| out[0] = 1.0);
        let sys = ControlAffineSystem::new("singular", 1, drift, vec![field]).unwrap();
        match eval_rhs(&sys, &[0.0], &[0.0]) {
            Err(Error::Numeric { state, .. }) => assert_eq!(state, vec![0.0]),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn rk4_constant_rhs_is_exact() {
        let sys = BuiltinSystem::Eikonal { dim: 2 }.build().unwrap();
        let next = step_rk4(&sys, &[0.0, 0.0], &[0.5, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(next[0], 0.05, epsilon = 1e-16);
        assert_eq!(next[1], 0.0);
        assert!(step_rk4(&sys, &[0.0, 0.0], &[0.5, 0.0], 0.0).is_err());
    }

    fn rotation() -> ControlAffineSystem {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        BuiltinSystem::Linear { a, b: DMatrix::zeros(2, 1) }.build().unwrap()
    }

    #[test]
    fn rk4_rotation_local_error() {
        // ẋ = y, ẏ = -x from (1, 0): (cos t, -sin t)
        let sys = rotation();
        let err = |dt: f64| {
            let n = step_rk4(&sys, &[1.0, 0.0], &[0.0], dt).unwrap();
            ((n[0] - dt.cos()).powi(2) + (n[1] + dt.sin()).powi(2)).sqrt()
        };
        for dt in [0.2, 0.1, 0.05] {
            // local truncation error of RK4 is dt^5/120 for this system
            assert!(err(dt) <= dt.powi(5) / 100.0, "dt={dt} err={}", err(dt));
            assert!(err(dt) / err(dt / 2.0) >= 8.0);
        }
    }

    #[test]
    fn rk4_observed_order_on_double_well() {
        let sys = dw();
        let x0 = [0.3, 0.8];
        let u = [0.2, -0.5];
        let reference = |t: f64| {
            let mut x = x0.to_vec();
            let n = 4096;
            for _ in 0..n {
                x = step_rk4(&sys, &x, &u, t / n as f64).unwrap();
            }
            x
        };
        let err = |dt: f64| {
            let r = reference(dt);
            let one = step_rk4(&sys, &x0, &u, dt).unwrap();
            ((one[0] - r[0]).powi(2) + (one[1] - r[1]).powi(2)).sqrt()
        };
        let ratio = err(0.2) / err(0.1);
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    #[test]
    fn running_cost_examples() {
        let pp = PenaltyParams::new(0.5, 0.8, 1.0, 0.1).unwrap();
        let cost = CostParams::new(vec![0.0, 0.0], pp).unwrap();
        assert_eq!(running_cost(&[0.0, 0.0], &[0.0, 0.0], &cost).unwrap(), 0.0);
        assert_eq!(running_cost(&[0.0, 0.0], &[1.0, 0.0], &cost).unwrap(), 1.0);
        assert_eq!(running_cost(&[1.0, 1.0], &[0.0, 0.0], &cost).unwrap(), 1.0);
        assert!(running_cost(&[1.0], &[0.0, 0.0], &cost).is_err());
    }

    proptest! {
        #[test]
        fn rhs_is_affine_in_control(x in prop::collection::vec(-2.0f64..2.0, 2),
                                    u in prop::collection::vec(-1.0f64..1.0, 2),
                                    w in prop::collection::vec(-1.0f64..1.0, 2),
                                    alpha in -2.0f64..2.0) {
            for sys in [dw(), BuiltinSystem::DoubleWellBilinear.build().unwrap()] {
                let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
                let lhs = eval_rhs(&sys, &x, &mix).unwrap();
                let ru = eval_rhs(&sys, &x, &u).unwrap();
                let rw = eval_rhs(&sys, &x, &w).unwrap();
                for i in 0..2 {
                    let rhs = alpha * ru[i] + (1.0 - alpha) * rw[i];
                    prop_assert!((lhs[i] - rhs).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn running_cost_zero_only_at_target(x in prop::collection::vec(-1.0f64..1.0, 2),
                                            u in prop::collection::vec(-1.0f64..1.0, 2)) {
            let pp = PenaltyParams::new(0.3, 0.6, 0.5, 0.1).unwrap();
            let cost = CostParams::new(vec![0.1, -0.2], pp).unwrap();
            let c = running_cost(&x, &u, &cost).unwrap();
            prop_assert!(c >= 0.0);
            let at_target = x == cost.target && u.iter().all(|v| *v == 0.0);
            prop_assert_eq!(c == 0.0, at_target);
        }
    }
}
