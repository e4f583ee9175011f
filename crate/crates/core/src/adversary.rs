//! Searches low-dimensional families of certified passive (or gain-bounded)
//! environments for a member that destabilises a given plant, and the
//! mass–spring case study.
//!
//! For an LTI plant the search maximises the spectral abscissa of the
//! closed-loop `A`; a witness must exceed a positive margin and the unstable
//! mode must be visible from the external inputs to the loop outputs. For
//! other plants the loop is simulated and blow-up of the output energy is
//! taken as heuristic evidence.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use serde_json::Value;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::feedback::{close_loop_lti_full, loop_gain_with, simulate_loop_with, Channel, ClosedLoop, LoopOptions};
use crate::gain::hinf_norm;
use crate::linalg::{self, CMatrix};
use crate::passivity::{osp_index, pr_margin, FrequencyGrid};
use crate::signals::{Signal, TimeGrid};
use crate::systems::json::{allow_keys, as_object, get, get_f64, get_str, get_usize, system_from_value};
use crate::systems::{OperatorExpr, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScale {
    Linear,
    Log,
    /// First grid point is exactly zero, the rest log-spaced on `[lo, hi]`.
    LogWithZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub scale: ParamScale,
}

impl ParamRange {
    fn new(name: &str, lo: f64, hi: f64, scale: ParamScale) -> Self {
        Self { name: name.to_string(), lo, hi, scale }
    }

    fn min_value(&self) -> f64 {
        match self.scale {
            ParamScale::LogWithZero => 0.0,
            _ => self.lo,
        }
    }

    /// Maps `x ∈ [0, 1]` onto the range.
    fn map(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self.scale {
            ParamScale::Linear => self.lo + (self.hi - self.lo) * x,
            ParamScale::Log => (self.lo.ln() + (self.hi.ln() - self.lo.ln()) * x).exp(),
            ParamScale::LogWithZero => {
                // [0, 0.1) ramps linearly from 0 to lo
                if x < 0.1 {
                    self.lo * x / 0.1
                } else {
                    (self.lo.ln() + (self.hi.ln() - self.lo.ln()) * (x - 0.1) / 0.9).exp()
                }
            }
        }
    }

    fn grid(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![self.map(0.5)];
        }
        match self.scale {
            ParamScale::LogWithZero => {
                let mut v = vec![0.0];
                v.extend((0..n - 1).map(|i| self.map(0.1 + 0.9 * i as f64 / (n - 2).max(1) as f64)));
                v
            }
            _ => (0..n).map(|i| self.map(i as f64 / (n - 1) as f64)).collect(),
        }
    }

    fn contains(&self, v: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.hi.abs());
        v >= self.min_value() - slack && v <= self.hi + slack
    }

    /// Inverse of [`ParamRange::map`].
    fn unmap(&self, v: f64) -> f64 {
        match self.scale {
            ParamScale::Linear => (v - self.lo) / (self.hi - self.lo),
            ParamScale::Log => (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
            ParamScale::LogWithZero => {
                if v < self.lo {
                    0.1 * v / self.lo
                } else {
                    0.1 + 0.9 * (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
                }
            }
        }
        .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// `k`.
    StaticGain,
    /// `k / (s + s0)`.
    FirstOrder,
    /// `k / (s + s0) + c`.
    Parallel,
    /// `c · a / (s + a)` with `|c| ≤ α`.
    GainBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CertMode {
    Passive,
    Osp { epsilon: f64 },
    Gain { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvFamily {
    pub kind: EnvKind,
    pub params: Vec<ParamRange>,
    pub mode: CertMode,
}

impl EnvFamily {
    pub fn static_gain() -> Self {
        Self {
            kind: EnvKind::StaticGain,
            params: vec![ParamRange::new("k", 1e-3, 1e3, ParamScale::LogWithZero)],
            mode: CertMode::Passive,
        }
    }

    pub fn first_order() -> Self {
        Self {
            kind: EnvKind::FirstOrder,
            params: vec![
                ParamRange::new("k", 1e-3, 1e3, ParamScale::Log),
                ParamRange::new("s0", 1e-3, 1e2, ParamScale::LogWithZero),
            ],
            mode: CertMode::Passive,
        }
    }

    pub fn parallel() -> Self {
        Self {
            kind: EnvKind::Parallel,
            params: vec![
                ParamRange::new("k", 1e-3, 1e3, ParamScale::Log),
                ParamRange::new("s0", 1e-3, 1e2, ParamScale::LogWithZero),
                ParamRange::new("c", 1e-3, 1e2, ParamScale::LogWithZero),
            ],
            mode: CertMode::Passive,
        }
    }

    pub fn gain_ball(alpha: f64) -> Self {
        Self {
            kind: EnvKind::GainBall,
            params: vec![
                ParamRange::new("c", -alpha, alpha, ParamScale::Linear),
                ParamRange::new("a", 1e-2, 1e2, ParamScale::Log),
            ],
            mode: CertMode::Gain { alpha },
        }
    }

    /// Replaces the bounds of one parameter.
    pub fn with_bounds(mut self, name: &str, lo: f64, hi: f64) -> Result<Self> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::arg(format!("family has no parameter `{name}`")))?;
        let log = matches!(p.scale, ParamScale::Log | ParamScale::LogWithZero);
        if !(lo < hi) || (log && !(lo > 0.0)) {
            return Err(Error::arg(format!("invalid bounds [{lo}, {hi}] for `{name}`")));
        }
        p.lo = lo;
        p.hi = hi;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |p: &ParamRange| p.min_value() >= 0.0;
        let ok = match self.kind {
            EnvKind::StaticGain | EnvKind::FirstOrder | EnvKind::Parallel => {
                self.params.iter().all(nonneg) || !matches!(self.mode, CertMode::Passive)
            }
            EnvKind::GainBall => self.params[1].min_value() > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg("family bounds admit members outside the certified class"))
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Scalar realisation of member `θ`.
    pub fn scalar_member(&self, theta: &[f64]) -> Result<StateSpace> {
        if theta.len() != self.params.len() {
            return Err(Error::arg(format!("expected {} parameters, got {}", self.params.len(), theta.len())));
        }
        for (p, &v) in self.params.iter().zip(theta) {
            if !p.contains(v) {
                return Err(Error::arg(format!("parameter {} = {v} outside [{}, {}]", p.name, p.min_value(), p.hi)));
            }
        }
        let static_gain = |k: f64| StateSpace::static_gain(DMatrix::from_element(1, 1, k));
        match self.kind {
            EnvKind::StaticGain => static_gain(theta[0]),
            EnvKind::FirstOrder => StateSpace::first_order(theta[0], theta[1]),
            EnvKind::Parallel => StateSpace::first_order(theta[0], theta[1])?.parallel(&static_gain(theta[2])?),
            EnvKind::GainBall => StateSpace::first_order(theta[0] * theta[1], theta[1]),
        }
    }
}

/// `m` decoupled copies of a SISO system.
pub fn diagonal_copies(ss: &StateSpace, m: usize) -> Result<StateSpace> {
    let mut out = ss.clone();
    for _ in 1..m {
        out = StateSpace::new(
            linalg::block_diag(out.a(), ss.a()),
            linalg::block_diag(out.b(), ss.b()),
            linalg::block_diag(out.c(), ss.c()),
            linalg::block_diag(out.d(), ss.d()),
        )?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberCertificate {
    pub kind: EnvKind,
    pub theta: Vec<f64>,
    pub mode: CertMode,
    /// Certified quantity: `pr_margin`, `osp_index - ε`, or `α - gain`.
    pub margin: f64,
    /// Member sits on the edge of the class (e.g. an integrator).
    pub boundary: bool,
}

/// Instantiates and certifies a member (scalar, or `m` decoupled copies).
pub fn make_env(family: &EnvFamily, theta: &[f64], m: usize) -> Result<(OperatorExpr, MemberCertificate)> {
    make_env_with(family, theta, m, &FrequencyGrid::default(), Settings::default().certification_tol)
}

pub fn make_env_with(
    family: &EnvFamily,
    theta: &[f64],
    m: usize,
    grid: &FrequencyGrid,
    tol: f64,
) -> Result<(OperatorExpr, MemberCertificate)> {
    let scalar = family.scalar_member(theta)?;
    let cert = certify(family, theta, &scalar, grid, tol)?;
    Ok((OperatorExpr::lti(diagonal_copies(&scalar, m)?), cert))
}

fn certify(family: &EnvFamily, theta: &[f64], ss: &StateSpace, grid: &FrequencyGrid, tol: f64) -> Result<MemberCertificate> {
    let abscissa = if ss.n_states() == 0 { f64::NEG_INFINITY } else { ss.spectral_abscissa() };
    if abscissa > tol {
        return Err(Error::Certification { margin: -abscissa, detail: "member has an unstable pole".into() });
    }
    let boundary = abscissa > -tol;
    let margin = match family.mode {
        CertMode::Passive => pr_margin(ss, grid)?.value,
        CertMode::Osp { epsilon } => osp_index(ss, grid)?.value - epsilon,
        CertMode::Gain { alpha } => {
            if boundary {
                return Err(Error::Certification { margin: f64::NEG_INFINITY, detail: "gain-ball member is not Hurwitz".into() });
            }
            alpha - hinf_norm(ss, INDEX_TOL)?.value
        }
    };
    if !(margin >= -tol) {
        return Err(Error::Certification { margin, detail: format!("{:?} check failed", family.mode) });
    }
    Ok(MemberCertificate { kind: family.kind, theta: theta.to_vec(), mode: family.mode, margin, boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    E2Free,
    E2Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Eigenvalue,
    /// Heuristic: trajectory overflow or energy blow-up.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstabilityCertificate {
    pub kind: EvidenceKind,
    pub spectral_abscissa: Option<f64>,
    /// `[re, im]` pairs of closed-loop eigenvalues.
    pub eigenvalues: Vec<[f64; 2]>,
    /// The unstable mode is controllable from the external inputs and
    /// observable from the loop outputs.
    pub visible: Option<bool>,
    pub overflow_step: Option<usize>,
    pub energy_ratio: Option<f64>,
    pub heuristic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Destabilized,
    Survived,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub theta: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsificationResult {
    pub verdict: Verdict,
    pub mode: LoopMode,
    pub member: Option<MemberCertificate>,
    pub instability: Option<InstabilityCertificate>,
    pub evaluations: usize,
    pub budget: usize,
    /// Best member found (largest abscissa, or log energy ratio).
    pub best_theta: Vec<f64>,
    pub best_score: f64,
    /// Largest certified closed-loop gain over the most critical members
    /// (survived LTI searches only).
    pub max_gain_lb: Option<f64>,
    /// Plant index relevant to the family (OSP index or `α·γ - 1`).
    pub plant_index: Option<f64>,
    pub marginal: bool,
    pub trace: Vec<TraceEntry>,
}

impl FalsificationResult {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("result serialises")
    }
}

#[derive(Debug, Clone)]
pub struct FalsifyOptions {
    pub grid_points: usize,
    pub witness_margin: f64,
    pub blowup_ratio: f64,
    pub cert_tol: f64,
    pub marginal_band: f64,
    pub freq_grid: FrequencyGrid,
    pub loop_opts: LoopOptions,
    /// Grid for trajectory-based search on non-LTI plants.
    pub sim_grid: TimeGrid,
    /// Members whose closed-loop gain is evaluated when the plant survives.
    pub gain_samples: usize,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        Self::from_settings(&Settings::default())
    }
}

impl FalsifyOptions {
    pub fn from_settings(s: &Settings) -> Self {
        Self {
            grid_points: s.falsify_grid,
            witness_margin: s.witness_margin,
            blowup_ratio: s.blowup_ratio,
            cert_tol: s.certification_tol,
            marginal_band: 0.01,
            freq_grid: FrequencyGrid::from_settings(s),
            loop_opts: LoopOptions::from_settings(s),
            sim_grid: TimeGrid::new(0.01, 4000).expect("valid grid"),
            gain_samples: 8,
        }
    }
}

/// Smallest singular value of `[λI - A, B]` (controllability) or
/// `[λI - A; C]` (observability), relative to the block scale.
fn pbh_defect(a: &DMatrix<f64>, other: &DMatrix<f64>, lambda: Complex<f64>, columns: bool) -> f64 {
    let n = a.nrows();
    let mut shifted: CMatrix = -linalg::to_complex(a);
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let o = linalg::to_complex(other);
    let m = if columns {
        let mut m = CMatrix::zeros(n, n + o.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((0, n), o.shape()).copy_from(&o);
        m
    } else {
        let mut m = CMatrix::zeros(n + o.nrows(), n);
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((n, 0), o.shape()).copy_from(&o);
        m
    };
    let scale = m.norm().max(1.0);
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min) / scale
}

/// Closed-loop realisation restricted to the channel a witness must affect.
fn witness_system(ss1: &StateSpace, env: &StateSpace, mode: LoopMode, cond_limit: f64) -> Result<StateSpace> {
    let full = close_loop_lti_full(ss1, env, cond_limit)?;
    let (m1, p1) = (ss1.n_inputs(), ss1.n_outputs());
    match mode {
        LoopMode::E2Zero => full.select(0..m1, 0..p1),
        LoopMode::E2Free => full.select(0..full.n_inputs(), 0..(p1 + m1)),
    }
}

fn eigen_certificate(sys: &StateSpace, witness_margin: f64) -> InstabilityCertificate {
    let poles = sys.poles();
    let abscissa = poles.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
    let visible = poles.iter().filter(|p| p.re >= witness_margin).any(|&p| {
        pbh_defect(sys.a(), sys.b(), p, true) > 1e-9 && pbh_defect(sys.a(), &sys.c().transpose(), p.conj(), true) > 1e-9
    });
    InstabilityCertificate {
        kind: EvidenceKind::Eigenvalue,
        spectral_abscissa: Some(abscissa),
        eigenvalues: poles.iter().map(|p| [p.re, p.im]).collect(),
        visible: Some(visible),
        overflow_step: None,
        energy_ratio: None,
        heuristic: false,
    }
}

fn trajectory_certificate(sigma1: &OperatorExpr, env: &OperatorExpr, mode: LoopMode, opts: &FalsifyOptions) -> Result<(f64, InstabilityCertificate)> {
    let cl = ClosedLoop::new(sigma1.clone(), env.clone(), mode == LoopMode::E2Zero)?;
    let (m1, m2) = cl.dims();
    let g = opts.sim_grid;
    let pulse = |t: f64| if t < 0.5 { 1.0 } else { 0.0 };
    let e1 = Signal::from_fn(g, m1, |t, o| o.iter_mut().for_each(|v| *v = pulse(t)));
    let e2 = match mode {
        LoopMode::E2Zero => Signal::zeros(g, m2),
        LoopMode::E2Free => Signal::from_fn(g, m2, |t, o| o.iter_mut().for_each(|v| *v = pulse(t))),
    };
    let mut cert = InstabilityCertificate {
        kind: EvidenceKind::Trajectory,
        spectral_abscissa: None,
        eigenvalues: vec![],
        visible: None,
        overflow_step: None,
        energy_ratio: None,
        heuristic: true,
    };
    match simulate_loop_with(&cl, &e1, &e2, &opts.loop_opts) {
        Ok(tr) => {
            let r = tr.energy_ratio();
            cert.energy_ratio = Some(r);
            Ok((r.max(f64::MIN_POSITIVE).log10(), cert))
        }
        Err(Error::Overflow { index, .. }) => {
            cert.overflow_step = Some(index);
            Ok((f64::INFINITY, cert))
        }
        Err(e) => Err(e),
    }
}

struct Search<'a> {
    family: &'a EnvFamily,
    sigma1: &'a OperatorExpr,
    ss1: Option<StateSpace>,
    m: usize,
    mode: LoopMode,
    opts: &'a FalsifyOptions,
    evaluations: usize,
    budget: usize,
    best: (f64, Vec<f64>),
    trace: Vec<TraceEntry>,
    scored: Vec<(f64, Vec<f64>)>,
    witness: Option<(MemberCertificate, InstabilityCertificate)>,
}

impl Search<'_> {
    fn threshold(&self) -> f64 {
        if self.ss1.is_some() {
            self.opts.witness_margin
        } else {
            self.opts.blowup_ratio.log10()
        }
    }

    /// Score of a member; `-∞` for members that cannot be evaluated.
    fn score(&mut self, theta: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        let Ok(scalar) = self.family.scalar_member(theta) else { return Ok(f64::NEG_INFINITY) };
        let env = diagonal_copies(&scalar, self.m)?;
        let (score, cert) = match &self.ss1 {
            Some(ss1) => match witness_system(ss1, &env, self.mode, self.opts.loop_opts.cond_limit) {
                Ok(sys) => {
                    let c = eigen_certificate(&sys, self.opts.witness_margin);
                    (c.spectral_abscissa.unwrap_or(f64::NEG_INFINITY), c)
                }
                Err(Error::IllPosed { .. }) => return Ok(f64::NEG_INFINITY),
                Err(e) => return Err(e),
            },
            None => match trajectory_certificate(self.sigma1, &OperatorExpr::lti(env), self.mode, self.opts) {
                Ok(x) => x,
                Err(Error::Divergence { .. }) | Err(Error::IllPosed { .. }) => return Ok(f64::NEG_INFINITY),
                Err(e) => return Err(e),
            },
        };
        self.scored.push((score, theta.to_vec()));
        if score > self.best.0 || self.trace.is_empty() {
            self.best = (score, theta.to_vec());
            self.trace.push(TraceEntry { evaluation: self.evaluations, theta: theta.to_vec(), score });
        }
        if self.witness.is_none() && score >= self.threshold() && cert.visible != Some(false) {
            if let Ok(member) = certify(self.family, theta, &scalar, &self.opts.freq_grid, self.opts.cert_tol) {
                self.witness = Some((member, cert));
            }
        }
        Ok(score)
    }

    fn done(&self) -> bool {
        self.witness.is_some() || self.evaluations >= self.budget
    }

    fn coarse(&mut self) -> Result<()> {
        let d = self.family.dim();
        let per_dim = {
            let mut n = self.opts.grid_points.max(2);
            while n > 2 && n.pow(d as u32) > self.budget {
                n -= 1;
            }
            n
        };
        let axes: Vec<Vec<f64>> = self.family.params.iter().map(|p| p.grid(per_dim)).collect();
        let total = per_dim.pow(d as u32);
        for idx in 0..total {
            if self.done() {
                break;
            }
            let mut rem = idx;
            let theta: Vec<f64> = axes
                .iter()
                .map(|ax| {
                    let v = ax[rem % per_dim];
                    rem /= per_dim;
                    v
                })
                .collect();
            self.score(&theta)?;
        }
        Ok(())
    }

    /// Nelder–Mead on the unit cube, maximising the score.
    fn refine(&mut self) -> Result<()> {
        let d = self.family.dim();
        if self.done() || !self.best.0.is_finite() {
            return Ok(());
        }
        let to_theta = |x: &[f64], fam: &EnvFamily| -> Vec<f64> { fam.params.iter().zip(x).map(|(p, &v)| p.map(v)).collect() };
        let start: Vec<f64> = self.family.params.iter().zip(&self.best.1).map(|(p, &v)| p.unmap(v)).collect();
        let step = 1.0 / self.opts.grid_points.max(2) as f64;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
        let f0 = -self.best.0;
        simplex.push((start.clone(), f0));
        for i in 0..d {
            if self.done() {
                return Ok(());
            }
            let mut x = start.clone();
            x[i] = if x[i] + step <= 1.0 { x[i] + step } else { x[i] - step };
            let f = -self.score(&to_theta(&x, self.family))?;
            simplex.push((x, f));
        }
        let clamp = |x: Vec<f64>| x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>();
        while !self.done() {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex.iter().flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
            if spread < 1e-9 {
                break;
            }
            let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64).collect();
            let worst = simplex[d].clone();
            let along = |t: f64| clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect());
            let xr = along(1.0);
            let fr = -self.score(&to_theta(&xr, self.family))?;
            if fr < simplex[0].1 {
                if self.done() {
                    break;
                }
                let xe = along(2.0);
                let fe = -self.score(&to_theta(&xe, self.family))?;
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[d - 1].1 {
                simplex[d] = (xr, fr);
            } else {
                if self.done() {
                    break;
                }
                let xc = along(-0.5);
                let fc = -self.score(&to_theta(&xc, self.family))?;
                if fc < worst.1 {
                    simplex[d] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for item in simplex.iter_mut().skip(1) {
                        if self.evaluations >= self.budget {
                            break;
                        }
                        let x: Vec<f64> = best.iter().zip(&item.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                        let f = -self.score(&to_theta(&x, self.family))?;
                        *item = (x, f);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Absolute tolerance of the H∞ norms behind gain-ball certificates.
const INDEX_TOL: f64 = 1e-10;

/// Plant index that decides the verdict in exact arithmetic: the OSP index
/// for passive families, `α·‖Σ1‖∞ - 1` for gain balls.
pub fn plant_index(sigma1: &OperatorExpr, family: &EnvFamily, grid: &FrequencyGrid) -> Option<f64> {
    let ss = sigma1.to_state_space()?;
    match family.mode {
        CertMode::Passive | CertMode::Osp { .. } => osp_index(&ss, grid).ok().map(|m| m.value),
        CertMode::Gain { alpha } => hinf_norm(&ss, INDEX_TOL).ok().map(|g| alpha * g.value - 1.0),
    }
}

pub fn falsify(sigma1: &OperatorExpr, family: &EnvFamily, budget: usize, mode: LoopMode) -> Result<FalsificationResult> {
    falsify_with(sigma1, family, budget, mode, &FalsifyOptions::default())
}

pub fn falsify_with(
    sigma1: &OperatorExpr,
    family: &EnvFamily,
    budget: usize,
    mode: LoopMode,
    opts: &FalsifyOptions,
) -> Result<FalsificationResult> {
    if budget == 0 {
        return Err(Error::arg("falsification budget must be at least 1"));
    }
    family.validate()?;
    let m = sigma1.input_dim();
    if sigma1.output_dim() != m {
        return Err(Error::dim("falsification needs a square plant"));
    }
    let mut search = Search {
        family,
        sigma1,
        ss1: sigma1.to_state_space(),
        m,
        mode,
        opts,
        evaluations: 0,
        budget,
        best: (f64::NEG_INFINITY, vec![]),
        trace: vec![],
        scored: vec![],
        witness: None,
    };
    search.coarse()?;
    search.refine()?;

    let index = plant_index(sigma1, family, &opts.freq_grid);
    let index_tol = match family.mode {
        CertMode::Gain { alpha } => alpha * INDEX_TOL,
        _ => opts.freq_grid.refine_tol,
    };
    let marginal = index.is_some_and(|i| i.abs() <= opts.marginal_band + index_tol);
    let (verdict, member, instability, max_gain_lb) = match search.witness.take() {
        Some((member, cert)) => (Verdict::Destabilized, Some(member), Some(cert), None),
        None => {
            let gain = match &search.ss1 {
                Some(ss1) => max_gain_over(ss1, family, &mut search.scored, mode, opts),
                None => None,
            };
            (Verdict::Survived, None, None, gain)
        }
    };
    Ok(FalsificationResult {
        verdict,
        mode,
        member,
        instability,
        evaluations: search.evaluations,
        budget,
        best_theta: search.best.1,
        best_score: search.best.0,
        max_gain_lb,
        plant_index: index,
        marginal,
        trace: search.trace,
    })
}

fn max_gain_over(ss1: &StateSpace, family: &EnvFamily, scored: &mut [(f64, Vec<f64>)], mode: LoopMode, opts: &FalsifyOptions) -> Option<f64> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let channel = match mode {
        LoopMode::E2Zero => Channel::E1ToY1,
        LoopMode::E2Free => Channel::Full,
    };
    let mut best: Option<f64> = None;
    for (_, theta) in scored.iter().take(opts.gain_samples) {
        let Ok(scalar) = family.scalar_member(theta) else { continue };
        let Ok(env) = diagonal_copies(&scalar, ss1.n_inputs()) else { continue };
        let cl = ClosedLoop::new(OperatorExpr::lti(ss1.clone()), OperatorExpr::lti(env), mode == LoopMode::E2Zero).ok()?;
        if let Ok(g) = loop_gain_with(&cl, channel, 1e-6, &opts.loop_opts) {
            best = Some(best.map_or(g.value, |b: f64| b.max(g.value)));
        }
    }
    best
}

/// Re-checks a destabilised verdict from scratch: the member certificate
/// and the instability certificate must both hold.
pub fn revalidate(sigma1: &OperatorExpr, family: &EnvFamily, result: &FalsificationResult, opts: &FalsifyOptions) -> Result<bool> {
    let (Some(member), Some(inst)) = (&result.member, &result.instability) else {
        return Ok(result.verdict == Verdict::Survived);
    };
    let scalar = family.scalar_member(&member.theta)?;
    if certify(family, &member.theta, &scalar, &opts.freq_grid, opts.cert_tol).is_err() {
        return Ok(false);
    }
    let env = diagonal_copies(&scalar, sigma1.input_dim())?;
    match (sigma1.to_state_space(), inst.kind) {
        (Some(ss1), EvidenceKind::Eigenvalue) => {
            let sys = witness_system(&ss1, &env, result.mode, opts.loop_opts.cond_limit)?;
            let c = eigen_certificate(&sys, opts.witness_margin);
            Ok(c.spectral_abscissa.is_some_and(|a| a >= opts.witness_margin) && c.visible == Some(true))
        }
        (_, EvidenceKind::Trajectory) => {
            let (score, _) = trajectory_certificate(sigma1, &OperatorExpr::lti(env), result.mode, opts)?;
            Ok(score >= opts.blowup_ratio.log10())
        }
        (None, EvidenceKind::Eigenvalue) => Ok(false),
    }
}

/// Falsification campaign document:
///
/// ```json
/// { "sigma1": <system>, "family": { "kind": "first_order",
///   "bounds": { "s0": [0.001, 10] }, "alpha": 1.0, "epsilon": 0.1 },
///   "budget": 2048, "mode": "e2_zero",
///   "tolerances": { "witness_margin": 1e-6, "marginal_band": 0.01 } }
/// ```
#[derive(Debug, Clone)]
pub struct Campaign {
    pub sigma1: OperatorExpr,
    pub family: EnvFamily,
    pub budget: usize,
    pub mode: LoopMode,
    pub tolerances: CampaignTolerances,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CampaignTolerances {
    pub witness_margin: Option<f64>,
    pub blowup_ratio: Option<f64>,
    pub cert_tol: Option<f64>,
    pub marginal_band: Option<f64>,
}

impl CampaignTolerances {
    pub fn apply(&self, opts: &mut FalsifyOptions) {
        opts.witness_margin = self.witness_margin.unwrap_or(opts.witness_margin);
        opts.blowup_ratio = self.blowup_ratio.unwrap_or(opts.blowup_ratio);
        opts.cert_tol = self.cert_tol.unwrap_or(opts.cert_tol);
        opts.marginal_band = self.marginal_band.unwrap_or(opts.marginal_band);
    }
}

pub fn parse_campaign(text: &str) -> Result<Campaign> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    let obj = as_object(&v, "$")?;
    allow_keys(obj, &["sigma1", "family", "budget", "mode", "tolerances"], "$")?;
    let sigma1 = system_from_value(get(obj, "sigma1", "$")?, "$.sigma1")?;
    let fam = as_object(get(obj, "family", "$")?, "$.family")?;
    allow_keys(fam, &["kind", "bounds", "alpha", "epsilon"], "$.family")?;
    let mut family = match get_str(fam, "kind", "$.family")? {
        "static_gain" => EnvFamily::static_gain(),
        "first_order" => EnvFamily::first_order(),
        "parallel" => EnvFamily::parallel(),
        "gain_ball" => EnvFamily::gain_ball(get_f64(fam, "alpha", "$.family")?),
        other => return Err(Error::parse("$.family.kind", format!("unknown family `{other}`"))),
    };
    if fam.contains_key("epsilon") {
        let epsilon = get_f64(fam, "epsilon", "$.family")?;
        family.mode = CertMode::Osp { epsilon };
    }
    if let Some(b) = fam.get("bounds") {
        let bounds = as_object(b, "$.family.bounds")?;
        for (name, range) in bounds {
            let path = format!("$.family.bounds.{name}");
            let pair = range
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
                .ok_or_else(|| Error::parse(path.clone(), "expected [lo, hi]"))?;
            family = family.with_bounds(name, pair.0, pair.1).map_err(|e| Error::parse(path, e.to_string()))?;
        }
    }
    let budget = if obj.contains_key("budget") { get_usize(obj, "budget", "$")? } else { Settings::default().falsify_budget };
    let mode = match obj.get("mode") {
        None => LoopMode::E2Zero,
        Some(_) => match get_str(obj, "mode", "$")? {
            "e2_zero" => LoopMode::E2Zero,
            "e2_free" => LoopMode::E2Free,
            other => return Err(Error::parse("$.mode", format!("unknown mode `{other}`"))),
        },
    };
    let mut tolerances = CampaignTolerances::default();
    if let Some(t) = obj.get("tolerances") {
        let path = "$.tolerances";
        let t = as_object(t, path)?;
        allow_keys(t, &["witness_margin", "blowup_ratio", "cert_tol", "marginal_band"], path)?;
        let opt = |key: &str| -> Result<Option<f64>> {
            if t.contains_key(key) {
                let v = get_f64(t, key, path)?;
                if !(v > 0.0) {
                    return Err(Error::parse(format!("{path}.{key}"), "must be positive"));
                }
                Ok(Some(v))
            } else {
                Ok(None)
            }
        };
        tolerances = CampaignTolerances {
            witness_margin: opt("witness_margin")?,
            blowup_ratio: opt("blowup_ratio")?,
            cert_tol: opt("cert_tol")?,
            marginal_band: opt("marginal_band")?,
        };
    }
    Ok(Campaign { sigma1, family, budget, mode, tolerances })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassSpringCase {
    pub m: f64,
    pub d: f64,
    pub s0: f64,
    pub k: f64,
    pub mass_osp_index: f64,
    pub mass_osp: bool,
    pub spring_pr_margin: f64,
    pub spring_passive: bool,
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_abscissa: f64,
    pub stable: bool,
    /// `d/m + s0 > 0`.
    pub predicate: bool,
    pub predicate_value: f64,
    pub predicate_agrees: bool,
    /// Trace and determinant test: `d/m + s0 > 0` and `d·s0 + k > 0`.
    pub hurwitz_predicate: bool,
    pub marginal: bool,
}

/// Mass `1/(ms + d)` in feedback with spring `k/(s + s0)`.
pub fn mass_spring_case(m: f64, d: f64, s0: f64, k: f64) -> Result<MassSpringCase> {
    mass_spring_case_with(m, d, s0, k, &FrequencyGrid::default(), Settings::default().stability_margin)
}

pub fn mass_spring_case_with(m: f64, d: f64, s0: f64, k: f64, grid: &FrequencyGrid, margin: f64) -> Result<MassSpringCase> {
    check_mass_spring(m, k)?;
    let osp = osp_index(&StateSpace::mass(m, d)?, grid)?.value;
    let pr = pr_margin(&StateSpace::first_order(k, s0)?, grid)?.value;
    assemble_case(m, d, s0, k, osp, pr, margin)
}

/// Every `(d, s0)` combination, `d` varying fastest. Indices are computed
/// once per axis value.
pub fn mass_spring_sweep(m: f64, k: f64, ds: &[f64], s0s: &[f64], grid: &FrequencyGrid, margin: f64) -> Result<Vec<MassSpringCase>> {
    check_mass_spring(m, k)?;
    let osp = ds.iter().map(|&d| Ok(osp_index(&StateSpace::mass(m, d)?, grid)?.value)).collect::<Result<Vec<_>>>()?;
    let pr = s0s.iter().map(|&s0| Ok(pr_margin(&StateSpace::first_order(k, s0)?, grid)?.value)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(ds.len() * s0s.len());
    for (&s0, &p) in s0s.iter().zip(&pr) {
        for (&d, &o) in ds.iter().zip(&osp) {
            out.push(assemble_case(m, d, s0, k, o, p, margin)?);
        }
    }
    Ok(out)
}

/// Spectral abscissa of the mass–spring loop.
pub fn mass_spring_abscissa(m: f64, d: f64, s0: f64, k: f64) -> Result<f64> {
    check_mass_spring(m, k)?;
    let cl = close_loop_lti_full(&StateSpace::mass(m, d)?, &StateSpace::first_order(k, s0)?, crate::config::WELL_POSED_COND_LIMIT)?;
    Ok(cl.spectral_abscissa())
}

fn check_mass_spring(m: f64, k: f64) -> Result<()> {
    if !(m > 0.0) || !(k > 0.0) {
        return Err(Error::arg(format!("mass and spring constant must be positive (m = {m}, k = {k})")));
    }
    Ok(())
}

fn assemble_case(m: f64, d: f64, s0: f64, k: f64, osp: f64, pr: f64, margin: f64) -> Result<MassSpringCase> {
    let cl = close_loop_lti_full(&StateSpace::mass(m, d)?, &StateSpace::first_order(k, s0)?, crate::config::WELL_POSED_COND_LIMIT)?;
    let poles = cl.poles();
    let abscissa = poles.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
    let stable = abscissa < -margin;
    let value = d / m + s0;
    let predicate = value > 0.0;
    Ok(MassSpringCase {
        m,
        d,
        s0,
        k,
        mass_osp_index: osp,
        mass_osp: osp > 0.0,
        spring_pr_margin: pr,
        spring_passive: s0 >= 0.0,
        eigenvalues: poles.iter().map(|p| [p.re, p.im]).collect(),
        spectral_abscissa: abscissa,
        stable,
        predicate,
        predicate_value: value,
        predicate_agrees: predicate == stable,
        hurwitz_predicate: predicate && d * s0 + k > 0.0,
        marginal: value.abs() <= 1e-6 || abscissa.abs() <= margin,
    })
}
