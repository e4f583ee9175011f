//! Finite-ensemble S-procedure.
//!
//! A quadratic form `σ(f) = ⟨f, Φ f⟩` is evaluated on stacked signal tuples
//! sampled from a subspace `H` defined by an LTI constraint. On a finite
//! ensemble the implication "σ1 ≥ 0 ⇒ σ0 ≤ 0" and the existence of a
//! multiplier `μ ≥ 0` with `σ0 + μ σ1 ≤ 0` can both be decided exactly; the
//! results are evidence about `H`, not a proof over it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::signals::probes::{along, band_limited_noise, family, ProbeSpec};
use crate::signals::{dot, l2_norm, shift_steps, Signal, TimeGrid};
use crate::systems::{simulate, OperatorExpr, StateSpace};

/// Names and widths of the stacked blocks of `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub blocks: Vec<(String, usize)>,
}

impl Layout {
    /// `(u1, u2, e1, e2)`, each of width `m`.
    pub fn four_block(m: usize) -> Self {
        Self::named(&["u1", "u2", "e1", "e2"], m)
    }

    /// `(u1, y1, e1)`, each of width `m`.
    pub fn three_block(m: usize) -> Self {
        Self::named(&["u1", "y1", "e1"], m)
    }

    fn named(names: &[&str], m: usize) -> Self {
        Self { blocks: names.iter().map(|n| (n.to_string(), m)).collect() }
    }

    pub fn total(&self) -> usize {
        self.blocks.iter().map(|b| b.1).sum()
    }

    fn names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.0.as_str()).collect()
    }

    fn uniform_width(&self) -> Option<usize> {
        let w = self.blocks.first()?.1;
        self.blocks.iter().all(|b| b.1 == w).then_some(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormKind {
    /// `diag(I, I, -γ²I, -γ²I)` on `(u1, u2, e1, e2)`.
    Gain { gamma: f64 },
    /// `u2ᵀ(e1 - u1)` on `(u1, u2, e1, e2)`.
    Passivity,
    /// `diag(0, I, -γ²I)` on `(u1, y1, e1)`.
    E2ZeroGain { gamma: f64 },
    /// `y1ᵀ(e1 - u1)` on `(u1, y1, e1)`.
    E2ZeroPassivity,
    /// `α²‖u2‖² - ‖e1 - u1‖²` on `(u1, u2, e1, e2)`.
    SmallGain { alpha: f64 },
    /// `α²‖y1‖² - ‖e1 - u1‖²` on `(u1, y1, e1)`.
    E2ZeroSmallGain { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticForm {
    pub layout: Layout,
    pub kind: FormKind,
    #[serde(serialize_with = "serialize_matrix")]
    pub phi: DMatrix<f64>,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

/// Builds a block matrix from a table of scalar multiples of `I_m`.
fn blocks(m: usize, coeffs: &[&[f64]]) -> DMatrix<f64> {
    let k = coeffs.len();
    DMatrix::from_fn(k * m, k * m, |i, j| if i % m == j % m { coeffs[i / m][j / m] } else { 0.0 })
}

pub fn make_form(layout: &Layout, kind: FormKind) -> Result<QuadraticForm> {
    let m = layout
        .uniform_width()
        .ok_or_else(|| Error::arg("form layouts need equally wide blocks"))?;
    let names = layout.names();
    let four = names == ["u1", "u2", "e1", "e2"];
    let three = names == ["u1", "y1", "e1"];
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::arg(format!("{name} must be positive, got {v}")))
        }
    };
    let phi = match kind {
        FormKind::Gain { gamma } if four => {
            let g2 = positive("γ", gamma)?.powi(2);
            blocks(m, &[&[1., 0., 0., 0.], &[0., 1., 0., 0.], &[0., 0., -g2, 0.], &[0., 0., 0., -g2]])
        }
        FormKind::Passivity if four => {
            blocks(m, &[&[0., -0.5, 0., 0.], &[-0.5, 0., 0.5, 0.], &[0., 0.5, 0., 0.], &[0., 0., 0., 0.]])
        }
        FormKind::SmallGain { alpha } if four => {
            let a2 = positive("α", alpha)?.powi(2);
            blocks(m, &[&[-1., 0., 1., 0.], &[0., a2, 0., 0.], &[1., 0., -1., 0.], &[0., 0., 0., 0.]])
        }
        FormKind::E2ZeroGain { gamma } if three => {
            let g2 = positive("γ", gamma)?.powi(2);
            blocks(m, &[&[0., 0., 0.], &[0., 1., 0.], &[0., 0., -g2]])
        }
        FormKind::E2ZeroPassivity if three => blocks(m, &[&[0., -0.5, 0.], &[-0.5, 0., 0.5], &[0., 0.5, 0.]]),
        FormKind::E2ZeroSmallGain { alpha } if three => {
            let a2 = positive("α", alpha)?.powi(2);
            blocks(m, &[&[-1., 0., 1.], &[0., a2, 0.], &[1., 0., -1.]])
        }
        other => {
            return Err(Error::arg(format!("form {other:?} does not apply to layout ({})", names.join(", "))));
        }
    };
    Ok(QuadraticForm { layout: layout.clone(), kind, phi })
}

impl QuadraticForm {
    /// `∫ f(t)ᵀ Φ f(t) dt` by the trapezoid rule.
    pub fn eval(&self, f: &Signal) -> Result<f64> {
        if f.channels() != self.layout.total() {
            return Err(Error::dim(format!(
                "form expects {} stacked channels, got {}",
                self.layout.total(),
                f.channels()
            )));
        }
        let grid = f.grid();
        let n = f.channels();
        let rows: Vec<f64> = self.phi.transpose().as_slice().to_vec();
        let mut acc = 0.0;
        for k in 0..grid.n_samples() {
            let x = f.sample(k);
            let quad: f64 = (0..n).map(|i| x[i] * dot(&rows[i * n..(i + 1) * n], x)).sum();
            acc += grid.weight(k) * quad;
        }
        Ok(acc)
    }
}

/// Gain level `γ` at which `σ0 + μσ1 ⪯ 0` on the graph of every `G` with
/// joint index `η > 0` (`He G ⪰ η(I + GᴴG)`), using `μ = 4/η`.
pub fn passivity_gamma(eta: f64) -> Option<(f64, f64)> {
    if !(eta > 0.0) {
        return None;
    }
    let mu = 4.0 / eta;
    Some(((2.0 * (2.0 + mu * mu / 4.0 + mu / 2.0)).sqrt(), mu))
}

/// Which constraint defines the sampled subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceTag {
    /// `u2 = e2 + G(u1)` on `(u1, u2, e1, e2)`.
    Passivity,
    /// `y1 = G(u1)` on `(u1, y1, e1)`.
    E2Zero,
    /// `u2 = e2 + G(u1)` on `(u1, u2, e1, e2)`, paired with gain-ball forms.
    SmallGain,
}

impl SubspaceTag {
    pub fn layout(self, m: usize) -> Layout {
        match self {
            SubspaceTag::Passivity | SubspaceTag::SmallGain => Layout::four_block(m),
            SubspaceTag::E2Zero => Layout::three_block(m),
        }
    }

    /// Channel count of a generator: `(u1, e1, e2)` or `(u1, e1)`.
    pub fn generator_channels(self, m: usize) -> usize {
        match self {
            SubspaceTag::Passivity | SubspaceTag::SmallGain => 3 * m,
            SubspaceTag::E2Zero => 2 * m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEnsemble {
    pub tag: SubspaceTag,
    pub layout: Layout,
    pub members: Vec<Signal>,
    /// `‖constrained channel - constraint(free channels)‖₂` per member.
    pub residuals: Vec<f64>,
}

impl SubspaceEnsemble {
    pub fn max_energy(&self) -> f64 {
        self.members.iter().map(|f| l2_norm(f).powi(2)).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn constraint_residual(g: &OperatorExpr, tag: SubspaceTag, f: &Signal, m: usize) -> Result<f64> {
    let y = simulate(g, &f.select(0, m)?)?;
    let target = match tag {
        SubspaceTag::Passivity | SubspaceTag::SmallGain => y.add(&f.select(3 * m, m)?)?,
        SubspaceTag::E2Zero => y,
    };
    Ok(l2_norm(&f.select(m, m)?.sub(&target)?))
}

/// Default shift offsets: `j · n_steps / (2 · count)` for `j = 0..count`.
pub fn default_shifts(grid: TimeGrid, count: usize) -> Vec<usize> {
    (0..count.max(1)).map(|j| j * grid.n_steps() / (2 * count.max(1))).collect()
}

/// Members built from generators (free channels), each also shifted by
/// every offset in `shifts` (in grid steps; include 0 to keep the
/// unshifted member).
pub fn sample_subspace_with(g: &StateSpace, generators: &[Signal], tag: SubspaceTag, shifts: &[usize]) -> Result<SubspaceEnsemble> {
    if !g.is_square() {
        return Err(Error::dim("subspace sampling needs a square G"));
    }
    let m = g.n_inputs();
    let op = OperatorExpr::lti(g.clone());
    let mut members = Vec::with_capacity(generators.len() * shifts.len());
    let mut residuals = Vec::with_capacity(members.capacity());
    for (i, gen) in generators.iter().enumerate() {
        if gen.channels() != tag.generator_channels(m) {
            return Err(Error::dim(format!(
                "generator {i} has {} channels, expected {}",
                gen.channels(),
                tag.generator_channels(m)
            )));
        }
        let u1 = gen.select(0, m)?;
        let e1 = gen.select(m, m)?;
        let y = simulate(&op, &u1)?;
        let f = match tag {
            SubspaceTag::Passivity | SubspaceTag::SmallGain => {
                let e2 = gen.select(2 * m, m)?;
                Signal::stack(&[&u1, &y.add(&e2)?, &e1, &e2])?
            }
            SubspaceTag::E2Zero => Signal::stack(&[&u1, &y, &e1])?,
        };
        for &s in shifts {
            let shifted = shift_steps(&f, s);
            residuals.push(constraint_residual(&op, tag, &shifted, m)?);
            members.push(shifted);
        }
    }
    Ok(SubspaceEnsemble { tag, layout: tag.layout(m), members, residuals })
}

pub fn sample_subspace(g: &StateSpace, generators: &[Signal], tag: SubspaceTag) -> Result<SubspaceEnsemble> {
    let Some(first) = generators.first() else {
        return Ok(SubspaceEnsemble { tag, layout: tag.layout(g.n_inputs()), members: vec![], residuals: vec![] });
    };
    let shifts = default_shifts(first.grid(), Settings::default().ensemble_shifts);
    sample_subspace_with(g, generators, tag, &shifts)
}

/// Deterministic generator family, cycling through four shapes by index:
///
/// * `i % 4 ∈ {0, 2}`: probe on `u1`, zero external signals (the `e = 0`
///   sub-subspace);
/// * `i % 4 = 1`: probe on `u1`, band-limited noise on the external channels;
/// * `i % 4 = 3`: for the four-block layout `u1 = 0` and `e1 = e2 = w`, so
///   that `u2ᵀ(e1 - u1) = ‖w‖² > 0`; for the three-block layout `e1 = 3 u1`.
pub fn default_generators(grid: TimeGrid, m: usize, tag: SubspaceTag, count: usize, seed: u64) -> Vec<Signal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = family(grid, m, &ProbeSpec::default());
    let four = tag.generator_channels(m) == 3 * m;
    let noise = |rng: &mut ChaCha8Rng| {
        let dir: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = band_limited_noise(grid, 0.5, rng);
        along(&n, &dir).scale(rng.gen_range(0.1..1.0))
    };
    (0..count)
        .map(|i| {
            let u1 = probes[i % probes.len()].scale(rng.gen_range(0.5..2.0));
            let zero = Signal::zeros(grid, m);
            let parts: Vec<Signal> = match (i % 4, four) {
                (1, true) => vec![u1, noise(&mut rng), noise(&mut rng)],
                (1, false) => vec![u1, noise(&mut rng)],
                (3, true) => {
                    let w = noise(&mut rng);
                    vec![zero, w.clone(), w]
                }
                (3, false) => {
                    let e1 = u1.scale(3.0);
                    vec![u1, e1]
                }
                (_, true) => vec![u1, zero.clone(), zero],
                (_, false) => vec![u1, zero],
            };
            Signal::stack(&parts.iter().collect::<Vec<_>>()).expect("same grid")
        })
        .collect()
}

/// `[lo, hi]` with `hi = None` meaning unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuInterval {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl MuInterval {
    /// A representative interior point.
    pub fn pick(&self) -> f64 {
        match self.hi {
            Some(hi) => 0.5 * (self.lo + hi),
            None => (2.0 * self.lo).max(self.lo + 1.0),
        }
    }

    pub fn contains(&self, mu: f64) -> bool {
        mu >= self.lo && self.hi.map_or(true, |h| mu <= h)
    }
}

/// Exact set `{μ ≥ 0 : a + μ b ≤ 0 for every pair}`.
pub fn mu_feasible(pairs: &[(f64, f64)]) -> Option<MuInterval> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for &(a, b) in pairs {
        if b > 0.0 {
            hi = hi.min(-a / b);
        } else if b < 0.0 {
            lo = lo.max(a / -b);
        } else if a > 0.0 {
            return None;
        }
    }
    (lo <= hi).then_some(MuInterval { lo, hi: hi.is_finite().then_some(hi) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormPair {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub member: usize,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SprocReport {
    pub tag: SubspaceTag,
    pub sigma0: FormKind,
    pub sigma1: FormKind,
    pub members: usize,
    pub tol: f64,
    pub max_residual: f64,
    /// A member with `σ1 > tol` (regularity), if any.
    pub regular_witness: Option<usize>,
    /// `σ0 ≤ tol` on every member with `σ1 ≥ -tol`.
    pub conditional_negativity: bool,
    pub violation: Option<Violation>,
    pub mu_interval: Option<MuInterval>,
    pub mu_hat: Option<f64>,
    /// `max_k a_k + μ̂ b_k`.
    pub max_combined: Option<f64>,
    pub ensemble_only: bool,
    pub caveat: String,
    pub pairs: Vec<FormPair>,
}

impl SprocReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serialises")
    }
}

/// Evaluates both forms on every member. `tol = None` uses
/// `1e-7 · (1 + max member energy)`.
pub fn check_sprocedure(ens: &SubspaceEnsemble, sigma0: &QuadraticForm, sigma1: &QuadraticForm, tol: Option<f64>) -> Result<SprocReport> {
    for (name, q) in [("σ0", sigma0), ("σ1", sigma1)] {
        if q.layout != ens.layout {
            return Err(Error::dim(format!("{name} layout does not match the ensemble layout")));
        }
    }
    let tol = tol.unwrap_or_else(|| 1e-7 * (1.0 + ens.max_energy()));
    let mut pairs = Vec::with_capacity(ens.members.len());
    for f in &ens.members {
        pairs.push((sigma0.eval(f)?, sigma1.eval(f)?));
    }
    let regular_witness = pairs.iter().position(|&(_, b)| b > tol);
    let mut violation: Option<Violation> = None;
    for (k, &(a, b)) in pairs.iter().enumerate() {
        if b >= -tol && a > tol {
            let better = match violation {
                None => true,
                // prefer b >= 0 witnesses, then the largest a
                Some(v) => (b >= 0.0 && v.b < 0.0) || ((b >= 0.0) == (v.b >= 0.0) && a > v.a),
            };
            if better {
                violation = Some(Violation { member: k, a, b });
            }
        }
    }
    let mu_interval = mu_feasible(&pairs);
    let mu_hat = mu_interval.map(|i| i.pick());
    let max_combined = mu_hat.map(|mu| pairs.iter().map(|&(a, b)| a + mu * b).fold(f64::NEG_INFINITY, f64::max));
    Ok(SprocReport {
        tag: ens.tag,
        sigma0: sigma0.kind,
        sigma1: sigma1.kind,
        members: ens.members.len(),
        tol,
        max_residual: ens.max_residual(),
        regular_witness,
        conditional_negativity: violation.is_none(),
        violation,
        mu_interval,
        mu_hat,
        max_combined,
        ensemble_only: true,
        caveat: "ensemble-only: verdicts hold on the sampled members and are evidence about the subspace, not a proof"
            .to_string(),
        pairs: pairs.into_iter().map(|(a, b)| FormPair { a, b }).collect(),
    })
}
