//! Negative feedback interconnection `Σ1 ‖ Σ2`:
//!
//! ```text
//! u1 = e1 - y2,   y1 = Σ1(u1)
//! u2 = e2 + y1,   y2 = Σ2(u2)
//! ```
//!
//! LTI pairs are closed exactly in state space; other pairs are simulated
//! with a per-step fixed-point solve of the algebraic loop.

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::gain::{empirical_gain_lb, hinf_norm, GainCertificate};
use crate::linalg;
use crate::signals::{l2_norm, write_columns, Signal};
use crate::systems::json::{allow_keys, as_object, get, get_str, system_from_value, system_to_value};
use crate::systems::{IoMap, LoopSolver, OperatorExpr, StateSpace, Stepper};

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    sigma1: OperatorExpr,
    sigma2: OperatorExpr,
    e2_clamped: bool,
}

impl ClosedLoop {
    pub fn new(sigma1: OperatorExpr, sigma2: OperatorExpr, e2_clamped: bool) -> Result<Self> {
        if sigma1.input_dim() != sigma2.output_dim() || sigma2.input_dim() != sigma1.output_dim() {
            return Err(Error::dim(format!(
                "loop does not chain: Σ1 is {}→{}, Σ2 is {}→{}",
                sigma1.input_dim(),
                sigma1.output_dim(),
                sigma2.input_dim(),
                sigma2.output_dim()
            )));
        }
        Ok(Self { sigma1, sigma2, e2_clamped })
    }

    pub fn sigma1(&self) -> &OperatorExpr {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &OperatorExpr {
        &self.sigma2
    }

    pub fn e2_clamped(&self) -> bool {
        self.e2_clamped
    }

    /// `(m1, m2)`: dimensions of `e1` and `e2`.
    pub fn dims(&self) -> (usize, usize) {
        (self.sigma1.input_dim(), self.sigma2.input_dim())
    }

    pub fn lti_pair(&self) -> Option<(StateSpace, StateSpace)> {
        Some((self.sigma1.to_state_space()?, self.sigma2.to_state_space()?))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "sigma1": system_to_value(&self.sigma1),
            "sigma2": system_to_value(&self.sigma2),
            "e2": if self.e2_clamped { "zero" } else { "free" },
        })
    }
}

/// Parses `{ "sigma1": <system>, "sigma2": <system>, "e2": "free" | "zero" }`.
/// `e2` defaults to `"free"`.
pub fn parse_loop(text: &str) -> Result<ClosedLoop> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    loop_from_value(&v, "$")
}

pub fn loop_from_value(v: &Value, path: &str) -> Result<ClosedLoop> {
    let obj = as_object(v, path)?;
    allow_keys(obj, &["sigma1", "sigma2", "e2"], path)?;
    let s1 = system_from_value(get(obj, "sigma1", path)?, &format!("{path}.sigma1"))?;
    let s2 = system_from_value(get(obj, "sigma2", path)?, &format!("{path}.sigma2"))?;
    let clamped = match obj.get("e2") {
        None => false,
        Some(_) => match get_str(obj, "e2", path)? {
            "free" => false,
            "zero" => true,
            other => return Err(Error::parse(format!("{path}.e2"), format!("expected \"free\" or \"zero\", got \"{other}\""))),
        },
    };
    ClosedLoop::new(s1, s2, clamped).map_err(|e| Error::parse(path, e.to_string()))
}

/// The six loop signals on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrajectory {
    pub e1: Signal,
    pub e2: Signal,
    pub u1: Signal,
    pub u2: Signal,
    pub y1: Signal,
    pub y2: Signal,
    /// Largest pointwise violation of the interconnection equations.
    pub residual: f64,
}

impl LoopTrajectory {
    /// `(‖u1 - e1 + y2‖₂, ‖u2 - e2 - y1‖₂)`.
    pub fn equation_residuals(&self) -> Result<(f64, f64)> {
        let r1 = self.u1.sub(&self.e1)?.add(&self.y2)?;
        let r2 = self.u2.sub(&self.e2)?.sub(&self.y1)?;
        Ok((l2_norm(&r1), l2_norm(&r2)))
    }

    pub fn to_csv_string(&self) -> String {
        write_columns(&[
            ("e1", &self.e1),
            ("e2", &self.e2),
            ("u1", &self.u1),
            ("u2", &self.u2),
            ("y1", &self.y1),
            ("y2", &self.y2),
        ])
    }

    /// `‖(y1, y2)‖² / ‖(e1, e2)‖²`, or infinity for zero input.
    pub fn energy_ratio(&self) -> f64 {
        let e = l2_norm(&self.e1).powi(2) + l2_norm(&self.e2).powi(2);
        let y = l2_norm(&self.y1).powi(2) + l2_norm(&self.y2).powi(2);
        if e == 0.0 {
            if y == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            y / e
        }
    }
}

/// Affine expression `X x + E e` of one loop signal.
struct Affine {
    x: DMatrix<f64>,
    e: DMatrix<f64>,
}

fn embed(rows: usize, cols: usize, block: &DMatrix<f64>, at: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    out.view_mut((0, at), block.shape()).copy_from(block);
    out
}

/// Exact closed loop with inputs `(e1, e2)` and outputs `(y1, y2, u1, u2)`.
pub fn close_loop_lti_full(ss1: &StateSpace, ss2: &StateSpace, cond_limit: f64) -> Result<StateSpace> {
    let (n1, n2) = (ss1.n_states(), ss2.n_states());
    let (m1, p1) = (ss1.n_inputs(), ss1.n_outputs());
    let (m2, p2) = (ss2.n_inputs(), ss2.n_outputs());
    if m1 != p2 || m2 != p1 {
        return Err(Error::dim(format!("loop does not chain: Σ1 is {m1}→{p1}, Σ2 is {m2}→{p2}")));
    }
    let (n, ne) = (n1 + n2, m1 + m2);
    let (d1, d2) = (ss1.d(), ss2.d());
    let well = DMatrix::identity(m1, m1) + d2 * d1;
    let cond = linalg::condition_number(&well);
    if !(cond < cond_limit) {
        return Err(Error::IllPosed { condition: cond, threshold: cond_limit });
    }
    let inv = well.try_inverse().ok_or(Error::IllPosed { condition: f64::INFINITY, threshold: cond_limit })?;

    let c1 = embed(p1, n, ss1.c(), 0);
    let c2 = embed(p2, n, ss2.c(), n1);
    let e1_sel = embed(m1, ne, &DMatrix::identity(m1, m1), 0);
    let e2_sel = embed(m2, ne, &DMatrix::identity(m2, m2), m1);

    // (I + D2 D1) u1 = e1 - D2 e2 - D2 C1 x1 - C2 x2
    let u1 = Affine {
        x: &inv * (-(d2 * &c1) - &c2),
        e: &inv * (&e1_sel - d2 * &e2_sel),
    };
    let y1 = Affine { x: &c1 + d1 * &u1.x, e: d1 * &u1.e };
    let u2 = Affine { x: y1.x.clone(), e: &y1.e + &e2_sel };
    let y2 = Affine { x: &c2 + d2 * &u2.x, e: d2 * &u2.e };

    let a0 = linalg::block_diag(ss1.a(), ss2.a());
    let b0 = linalg::block_diag(ss1.b(), ss2.b());
    let u_x = crate::systems::stack_rows(&u1.x, &u2.x);
    let u_e = crate::systems::stack_rows(&u1.e, &u2.e);
    let a = &a0 + &b0 * u_x;
    let b = &b0 * u_e;
    let c = [&y1.x, &y2.x, &u1.x, &u2.x]
        .into_iter()
        .fold(DMatrix::zeros(0, n), |acc, m| crate::systems::stack_rows(&acc, m));
    let d = [&y1.e, &y2.e, &u1.e, &u2.e]
        .into_iter()
        .fold(DMatrix::zeros(0, ne), |acc, m| crate::systems::stack_rows(&acc, m));
    StateSpace::new(a, b, c, d)
}

/// Exact closed loop `R_ey`: inputs `(e1, e2)`, outputs `(y1, y2)`.
pub fn close_loop_lti(ss1: &StateSpace, ss2: &StateSpace) -> Result<StateSpace> {
    let full = close_loop_lti_full(ss1, ss2, crate::config::WELL_POSED_COND_LIMIT)?;
    let (m, p) = (full.n_inputs(), full.n_outputs());
    full.select(0..m, 0..p / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `R_ey`: `(e1, e2) ↦ (y1, y2)`.
    Full,
    /// `R_eu`: `(e1, e2) ↦ (u1, u2)`.
    EToU,
    /// `R_{e1 y1}`.
    E1ToY1,
}

/// Options shared by loop evaluation routines.
#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub solver: LoopSolver,
    pub cond_limit: f64,
    pub stability_margin: f64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self::from_settings(&Settings::default())
    }
}

impl LoopOptions {
    pub fn from_settings(s: &Settings) -> Self {
        Self {
            solver: LoopSolver { damping: s.loop_damping, max_iter: s.loop_max_iter, tol: s.loop_tol },
            cond_limit: s.well_posed_cond,
            stability_margin: s.stability_margin,
        }
    }
}

/// Selects a channel of the full `(e1, e2) ↦ (y1, y2, u1, u2)` realisation.
pub fn channel_system(full: &StateSpace, m1: usize, p1: usize, channel: Channel, e2_clamped: bool) -> Result<StateSpace> {
    let m = full.n_inputs();
    let inputs = if e2_clamped { 0..m1 } else { 0..m };
    let outputs = match channel {
        Channel::Full => 0..(p1 + m1),
        Channel::EToU => (p1 + m1)..full.n_outputs(),
        Channel::E1ToY1 => return full.select(0..m1, 0..p1),
    };
    full.select(inputs, outputs)
}

/// Simulates the loop from zero initial state.
pub fn simulate_loop(cl: &ClosedLoop, e1: &Signal, e2: &Signal) -> Result<LoopTrajectory> {
    simulate_loop_with(cl, e1, e2, &LoopOptions::default())
}

pub fn simulate_loop_with(cl: &ClosedLoop, e1: &Signal, e2: &Signal, opts: &LoopOptions) -> Result<LoopTrajectory> {
    let (m1, m2) = cl.dims();
    if e1.channels() != m1 || e2.channels() != m2 {
        return Err(Error::dim(format!(
            "external inputs have {} and {} channels, loop expects {m1} and {m2}",
            e1.channels(),
            e2.channels()
        )));
    }
    if e1.grid() != e2.grid() {
        return Err(Error::arg("e1 and e2 must share a time grid"));
    }
    if cl.e2_clamped && !e2.is_zero() {
        return Err(Error::arg("e2 must be identically zero for an e2 = 0 loop"));
    }
    match cl.lti_pair() {
        Some((ss1, ss2)) => simulate_lti_loop(&ss1, &ss2, e1, e2, opts),
        None => simulate_generic_loop(cl, e1, e2, opts),
    }
}

fn simulate_lti_loop(ss1: &StateSpace, ss2: &StateSpace, e1: &Signal, e2: &Signal, opts: &LoopOptions) -> Result<LoopTrajectory> {
    let full = close_loop_lti_full(ss1, ss2, opts.cond_limit)?;
    let e = Signal::stack(&[e1, e2])?;
    let out = crate::systems::simulate(&OperatorExpr::lti(full), &e)?;
    let (p1, p2) = (ss1.n_outputs(), ss2.n_outputs());
    let y1 = out.select(0, p1)?;
    let y2 = out.select(p1, p2)?;
    let u1 = out.select(p1 + p2, p2)?;
    let u2 = out.select(p1 + 2 * p2, p1)?;
    finish(e1, e2, u1, u2, y1, y2)
}

fn finish(e1: &Signal, e2: &Signal, u1: Signal, u2: Signal, y1: Signal, y2: Signal) -> Result<LoopTrajectory> {
    let r1 = u1.sub(e1)?.add(&y2)?.max_abs();
    let r2 = u2.sub(e2)?.sub(&y1)?.max_abs();
    Ok(LoopTrajectory { e1: e1.clone(), e2: e2.clone(), u1, u2, y1, y2, residual: r1.max(r2) })
}

fn simulate_generic_loop(cl: &ClosedLoop, e1: &Signal, e2: &Signal, opts: &LoopOptions) -> Result<LoopTrajectory> {
    let grid = e1.grid();
    let dt = grid.dt();
    let mut s1 = Stepper::build(&cl.sigma1, dt, opts.solver);
    let mut s2 = Stepper::build(&cl.sigma2, dt, opts.solver);
    let (m1, m2) = cl.dims();
    let n = grid.n_samples();
    let (mut u1s, mut u2s, mut y1s, mut y2s) =
        (Vec::with_capacity(n * m1), Vec::with_capacity(n * m2), Vec::with_capacity(n * m2), Vec::with_capacity(n * m1));
    for k in 0..n {
        let (ek1, ek2) = (e1.sample(k), e2.sample(k));
        let u1 = opts.solver.solve(k, ek1.to_vec(), |u1| {
            let y1 = s1.output(k, u1)?;
            let u2: Vec<f64> = ek2.iter().zip(&y1).map(|(a, b)| a + b).collect();
            let y2 = s2.output(k, &u2)?;
            Ok(ek1.iter().zip(&y2).map(|(a, b)| a - b).collect())
        })?;
        let y1 = s1.output(k, &u1)?;
        let u2: Vec<f64> = ek2.iter().zip(&y1).map(|(a, b)| a + b).collect();
        let y2 = s2.output(k, &u2)?;
        if y1.iter().chain(&y2).chain(&u1).any(|v| !v.is_finite()) {
            return Err(Error::Overflow { index: k, time: grid.time(k) });
        }
        if k + 1 < n {
            s1.advance(k, &u1)?;
            s2.advance(k, &u2)?;
        }
        u1s.extend(u1);
        u2s.extend(u2);
        y1s.extend(y1);
        y2s.extend(y2);
    }
    finish(
        e1,
        e2,
        Signal::new(grid, m1, u1s)?,
        Signal::new(grid, m2, u2s)?,
        Signal::new(grid, m2, y1s)?,
        Signal::new(grid, m1, y2s)?,
    )
}

/// Exact closed-loop gain of an LTI pair. Fails with `Unbounded` when the
/// loop is not internally stable.
pub fn loop_gain(cl: &ClosedLoop, channel: Channel, tol: f64) -> Result<GainCertificate> {
    loop_gain_with(cl, channel, tol, &LoopOptions::default())
}

pub fn loop_gain_with(cl: &ClosedLoop, channel: Channel, tol: f64, opts: &LoopOptions) -> Result<GainCertificate> {
    let (ss1, ss2) = cl
        .lti_pair()
        .ok_or_else(|| Error::arg("exact loop gain needs LTI subsystems; use loop_gain_empirical"))?;
    let full = close_loop_lti_full(&ss1, &ss2, opts.cond_limit)?;
    let abscissa = full.spectral_abscissa();
    if !(abscissa < -opts.stability_margin) {
        return Err(Error::Unbounded { abscissa });
    }
    let sys = channel_system(&full, ss1.n_inputs(), ss1.n_outputs(), channel, cl.e2_clamped)?;
    hinf_norm(&sys, tol)
}

/// Probe-based lower bound on a loop channel; works for any operator pair.
pub fn loop_gain_empirical(cl: &ClosedLoop, channel: Channel, probes: &[Signal], opts: &LoopOptions) -> Result<GainCertificate> {
    struct Channelled<'a> {
        cl: &'a ClosedLoop,
        channel: Channel,
        opts: &'a LoopOptions,
    }
    impl IoMap for Channelled<'_> {
        fn input_dim(&self) -> usize {
            let (m1, m2) = self.cl.dims();
            match self.channel {
                Channel::E1ToY1 => m1,
                _ if self.cl.e2_clamped => m1,
                _ => m1 + m2,
            }
        }
        fn output_dim(&self) -> usize {
            let (m1, m2) = self.cl.dims();
            match self.channel {
                Channel::E1ToY1 => m2,
                _ => m1 + m2,
            }
        }
        fn apply(&self, e: &Signal) -> Result<Signal> {
            let (m1, m2) = self.cl.dims();
            let e1 = e.select(0, m1)?;
            let e2 = if e.channels() > m1 { e.select(m1, m2)? } else { Signal::zeros(e.grid(), m2) };
            let t = simulate_loop_with(self.cl, &e1, &e2, self.opts)?;
            match self.channel {
                Channel::Full => Signal::stack(&[&t.y1, &t.y2]),
                Channel::EToU => Signal::stack(&[&t.u1, &t.u2]),
                Channel::E1ToY1 => Ok(t.y1),
            }
        }
    }
    empirical_gain_lb(&Channelled { cl, channel, opts }, probes)
}

/// Loop transformation: returns `(Σ1 - εI, Σ2 ‖ εI)` where the second
/// component is `Σ2` under negative feedback through `εI`. If `Σ2` is
/// passive the transformed environment is output strictly passive with
/// index `ε`.
///
/// The transformed loop driven by `(e1, e2 + ε e1)` reproduces the
/// original loop driven by `(e1, e2)`, with `y1 = ỹ1 + ε ũ1` and `y2 = ỹ2`.
pub fn loop_transform_passivity(
    sigma1: &OperatorExpr,
    sigma2: &OperatorExpr,
    eps: f64,
) -> Result<(OperatorExpr, OperatorExpr)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg(format!("loop transformation needs ε > 0, got {eps}")));
    }
    let m = sigma1.input_dim();
    if sigma1.output_dim() != m || sigma2.input_dim() != m || sigma2.output_dim() != m {
        return Err(Error::dim("loop transformation needs square subsystems of equal size"));
    }
    if let Some(ss2) = sigma2.to_state_space() {
        let eps_i = StateSpace::static_gain(DMatrix::identity(m, m) * eps)?;
        ss2.feedback(&eps_i, crate::config::WELL_POSED_COND_LIMIT)?;
    }
    let shifted = OperatorExpr::sum(vec![sigma1.clone(), OperatorExpr::identity(m, -eps)?])?;
    let wrapped = OperatorExpr::feedback(sigma2.clone(), OperatorExpr::identity(m, eps)?)?;
    Ok((shifted, wrapped))
}

/// The `(G - εI, Δ + εI)` split of `Σ1 = G + Δ`.
pub fn strict_split(g: &OperatorExpr, delta: &OperatorExpr, eps: f64) -> Result<(OperatorExpr, OperatorExpr)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg(format!("split needs ε > 0, got {eps}")));
    }
    let m = g.input_dim();
    Ok((
        OperatorExpr::sum(vec![g.clone(), OperatorExpr::identity(m, -eps)?])?,
        OperatorExpr::sum(vec![delta.clone(), OperatorExpr::identity(m, eps)?])?,
    ))
}

/// Input map `(e1, e2) ↦ (e1, e2 + ε e1)` and output map
/// `(ỹ1, ỹ2, ũ1, ũ2) ↦ (ỹ1 + ε ũ1, ỹ2)` relating a transformed loop to
/// the original one.
pub fn transform_io_maps(m: usize, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut pre = DMatrix::identity(2 * m, 2 * m);
    let mut post = DMatrix::zeros(2 * m, 4 * m);
    for i in 0..m {
        pre[(m + i, i)] = eps;
        post[(i, i)] = 1.0;
        post[(m + i, m + i)] = 1.0;
        post[(i, 2 * m + i)] = eps;
    }
    (pre, post)
}

/// `R_ey` of the original loop rebuilt from the transformed pair.
pub fn transformed_r_ey(ss1: &StateSpace, ss2: &StateSpace, eps: f64, opts: &LoopOptions) -> Result<StateSpace> {
    let (t1, t2) = loop_transform_passivity(&OperatorExpr::lti(ss1.clone()), &OperatorExpr::lti(ss2.clone()), eps)?;
    let (t1, t2) = (t1.to_state_space().expect("LTI"), t2.to_state_space().expect("LTI"));
    let full = close_loop_lti_full(&t1, &t2, opts.cond_limit)?;
    let (pre, post) = transform_io_maps(ss1.n_inputs(), eps);
    full.sandwich(&pre, &post)
}

/// `Δ2 · G · Δ1` for orthogonal `Δ1` (input side) and `Δ2` (output side).
pub fn multiplier_transform(g: &StateSpace, delta1: &DMatrix<f64>, delta2: &DMatrix<f64>) -> Result<OperatorExpr> {
    for (name, d, size) in [("Δ1", delta1, g.n_inputs()), ("Δ2", delta2, g.n_outputs())] {
        if d.nrows() != size || d.ncols() != size {
            return Err(Error::dim(format!("{name} must be {size}×{size}")));
        }
        let defect = linalg::orthogonality_defect(d);
        if !(defect <= 1e-9) {
            return Err(Error::arg(format!("{name} is not orthogonal (singular-value defect {defect:e})")));
        }
    }
    OperatorExpr::cascade(vec![
        OperatorExpr::lti(StateSpace::static_gain(delta1.clone())?),
        OperatorExpr::lti(g.clone()),
        OperatorExpr::lti(StateSpace::static_gain(delta2.clone())?),
    ])
}

/// Eigenvalues of the closed-loop `A` matrix.
pub fn closed_loop_poles(ss1: &StateSpace, ss2: &StateSpace, cond_limit: f64) -> Result<Vec<nalgebra::Complex<f64>>> {
    Ok(close_loop_lti_full(ss1, ss2, cond_limit)?.poles())
}
