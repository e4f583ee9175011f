//! Time-domain evaluation of operator trees.
//!
//! Signals are interpreted as held (piecewise constant) between samples, so
//! LTI nodes are propagated with the exact zero-order-hold discretisation and
//! the output at `t_k` is `C x_k + D u_k`. Every expression is reduced to a
//! [`Stepper`] that separates "output for a candidate input" from "commit
//! the input and advance"; the feedback solvers rely on that split.

use nalgebra::{DMatrix, DVector};

use super::expr::{GainProfile, OperatorExpr, StaticMap};
use super::statespace::zoh_step;
use crate::error::{Error, Result};
use crate::signals::{Signal, TimeGrid};

/// Parameters of the per-step damped fixed-point iteration used to resolve
/// algebraic loops that are not LTI.
#[derive(Debug, Clone, Copy)]
pub struct LoopSolver {
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LoopSolver {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

impl LoopSolver {
    /// Solves `x = f(x)` by `x <- (1 - a) x + a f(x)`; the first evaluation
    /// is undamped so loops without feedthrough settle in one pass.
    pub fn solve(
        &self,
        step: usize,
        x0: Vec<f64>,
        mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let mut x = f(&x0)?;
        let mut residual = f64::INFINITY;
        for _ in 0..self.max_iter {
            let fx = f(&x)?;
            let scale = 1.0 + x.iter().chain(&fx).fold(0.0f64, |m, v| m.max(v.abs()));
            residual = x.iter().zip(&fx).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if !residual.is_finite() {
                break;
            }
            if residual <= self.tol * scale {
                return Ok(fx);
            }
            for (xi, fi) in x.iter_mut().zip(&fx) {
                *xi = (1.0 - self.damping) * *xi + self.damping * fi;
            }
        }
        Err(Error::Divergence { step, residual })
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Stepper {
    Lti {
        ad: DMatrix<f64>,
        bd: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        x: DVector<f64>,
    },
    Static(StaticMap),
    TvGain { profile: GainProfile, dt: f64 },
    Sum(Vec<Stepper>),
    Cascade(Vec<Stepper>),
    Scale(f64, Box<Stepper>),
    Feedback {
        forward: Box<Stepper>,
        backward: Box<Stepper>,
        solver: LoopSolver,
        output_dim: usize,
    },
}

impl Stepper {
    pub(crate) fn build(expr: &OperatorExpr, dt: f64, solver: LoopSolver) -> Stepper {
        if let Some(ss) = expr.to_state_space() {
            let (ad, bd) = ss.zoh(dt);
            return Stepper::Lti {
                x: DVector::zeros(ss.n_states()),
                ad,
                bd,
                c: ss.c().clone(),
                d: ss.d().clone(),
            };
        }
        match expr {
            OperatorExpr::Lti(_) | OperatorExpr::ScaledIdentity { .. } => unreachable!("LTI handled above"),
            OperatorExpr::Static { map, .. } => Stepper::Static(*map),
            OperatorExpr::TimeVaryingGain { profile, .. } => Stepper::TvGain { profile: *profile, dt },
            OperatorExpr::Sum(c) => Stepper::Sum(c.iter().map(|e| Stepper::build(e, dt, solver)).collect()),
            OperatorExpr::Cascade(c) => {
                Stepper::Cascade(c.iter().map(|e| Stepper::build(e, dt, solver)).collect())
            }
            OperatorExpr::Scale(k, c) => Stepper::Scale(*k, Box::new(Stepper::build(c, dt, solver))),
            OperatorExpr::Feedback { forward, backward } => Stepper::Feedback {
                forward: Box::new(Stepper::build(forward, dt, solver)),
                backward: Box::new(Stepper::build(backward, dt, solver)),
                solver,
                output_dim: forward.output_dim(),
            },
        }
    }

    /// Output at step `k` for input sample `u`, without changing state.
    pub(crate) fn output(&self, k: usize, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            Stepper::Lti { c, d, x, .. } => {
                let uv = DVector::from_column_slice(u);
                Ok((c * x + d * uv).iter().copied().collect())
            }
            Stepper::Static(map) => Ok(u.iter().map(|&v| map.apply(v)).collect()),
            Stepper::TvGain { profile, dt } => {
                let g = profile.at(k as f64 * dt);
                Ok(u.iter().map(|v| g * v).collect())
            }
            Stepper::Sum(children) => {
                let mut acc = children[0].output(k, u)?;
                for c in &children[1..] {
                    for (a, b) in acc.iter_mut().zip(c.output(k, u)?) {
                        *a += b;
                    }
                }
                Ok(acc)
            }
            Stepper::Cascade(children) => {
                let mut v = u.to_vec();
                for c in children {
                    v = c.output(k, &v)?;
                }
                Ok(v)
            }
            Stepper::Scale(s, c) => Ok(c.output(k, u)?.into_iter().map(|v| s * v).collect()),
            Stepper::Feedback { .. } => Ok(self.feedback_solve(k, u)?.0),
        }
    }

    /// Returns `(y, e)` with `y = forward(e)`, `e = u - backward(y)`.
    fn feedback_solve(&self, k: usize, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let Stepper::Feedback { forward, backward, solver, output_dim } = self else {
            unreachable!()
        };
        let error_of = |y: &[f64]| -> Result<Vec<f64>> {
            let b = backward.output(k, y)?;
            Ok(u.iter().zip(&b).map(|(ui, bi)| ui - bi).collect())
        };
        let y = solver.solve(k, vec![0.0; *output_dim], |y| forward.output(k, &error_of(y)?))?;
        let e = error_of(&y)?;
        Ok((y, e))
    }

    /// Commits input `u` at step `k` and advances internal state to `k + 1`.
    pub(crate) fn advance(&mut self, k: usize, u: &[f64]) -> Result<()> {
        match self {
            Stepper::Lti { ad, bd, x, .. } => {
                if x.nrows() > 0 {
                    *x = zoh_step(ad, bd, x, u);
                }
                Ok(())
            }
            Stepper::Static(_) | Stepper::TvGain { .. } => Ok(()),
            Stepper::Sum(children) => {
                for c in children.iter_mut() {
                    c.advance(k, u)?;
                }
                Ok(())
            }
            Stepper::Cascade(children) => {
                let mut v = u.to_vec();
                for c in children.iter_mut() {
                    let next = c.output(k, &v)?;
                    c.advance(k, &v)?;
                    v = next;
                }
                Ok(())
            }
            Stepper::Scale(_, c) => c.advance(k, u),
            Stepper::Feedback { .. } => {
                let (y, e) = self.feedback_solve(k, u)?;
                let Stepper::Feedback { forward, backward, .. } = self else { unreachable!() };
                forward.advance(k, &e)?;
                backward.advance(k, &y)
            }
        }
    }
}

/// Something that maps input signals to output signals on the same grid.
/// Implemented by [`OperatorExpr`]; test fixtures (e.g. deliberately
/// anti-causal maps) implement it directly.
pub trait IoMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, u: &Signal) -> Result<Signal>;
}

impl IoMap for OperatorExpr {
    fn input_dim(&self) -> usize {
        OperatorExpr::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        OperatorExpr::output_dim(self)
    }
    fn apply(&self, u: &Signal) -> Result<Signal> {
        simulate(self, u)
    }
}

/// `y = op(u)` from zero initial state.
pub fn simulate(op: &OperatorExpr, u: &Signal) -> Result<Signal> {
    simulate_with(op, u, LoopSolver::default())
}

pub fn simulate_with(op: &OperatorExpr, u: &Signal, solver: LoopSolver) -> Result<Signal> {
    if u.channels() != op.input_dim() {
        return Err(Error::dim(format!(
            "input has {} channels, operator expects {}",
            u.channels(),
            op.input_dim()
        )));
    }
    let grid = u.grid();
    let p = op.output_dim();
    let mut st = Stepper::build(op, grid.dt(), solver);
    let mut values = Vec::with_capacity(grid.n_samples() * p);
    for k in 0..grid.n_samples() {
        let uk = u.sample(k);
        let y = st.output(k, uk)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { index: k, time: grid.time(k) });
        }
        values.extend_from_slice(&y);
        if k + 1 < grid.n_samples() {
            st.advance(k, uk)?;
        }
    }
    Ok(Signal::from_raw(grid, p, values))
}

/// Outcome of a causality check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CausalityReport {
    pub causal: bool,
    /// Largest `||P_T op(P_T u) - P_T op(u)||_2` over all probe/T pairs.
    pub max_defect: f64,
    /// Set when no probes were supplied (the verdict is vacuous).
    pub no_probes: bool,
}

/// Empirical check of `P_T op P_T = P_T op` on every probe/horizon pair.
pub fn check_causality(op: &dyn IoMap, probes: &[Signal], horizons: &[f64], tol: f64) -> Result<CausalityReport> {
    if probes.is_empty() {
        return Ok(CausalityReport { causal: true, max_defect: 0.0, no_probes: true });
    }
    let mut worst = 0.0f64;
    for u in probes {
        if u.channels() != op.input_dim() {
            return Err(Error::dim("probe channel count does not match operator input"));
        }
        let full = op.apply(u)?;
        for &t in horizons {
            let lhs = crate::signals::truncate(&op.apply(&crate::signals::truncate(u, t)?)?, t)?;
            let rhs = crate::signals::truncate(&full, t)?;
            worst = worst.max(crate::signals::l2_norm(&lhs.sub(&rhs)?));
        }
    }
    Ok(CausalityReport { causal: worst <= tol, max_defect: worst, no_probes: false })
}

/// Convenience: zero-state step response samples of an LTI system.
pub fn step_response(op: &OperatorExpr, grid: TimeGrid) -> Result<Signal> {
    let u = Signal::from_fn(grid, op.input_dim(), |_, o| o.iter_mut().for_each(|v| *v = 1.0));
    simulate(op, &u)
}
