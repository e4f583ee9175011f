//! Passivity margins and indices.
//!
//! LTI systems are assessed pointwise in frequency on a log grid (plus
//! `ω = 0` and the `ω → ∞` limit given by `D`), with golden-section
//! refinement around the grid minimiser. Three per-frequency indices are
//! used, all for a square `G = G(jω)` with Hermitian part `He G`:
//!
//! * positive-real margin `λ_min(He G)`: the largest `δ` with `He G ⪰ δ I`;
//! * OSP index: the largest `ε` with `He G ⪰ ε GᴴG`;
//! * joint strict index: the largest `η` with `He G ⪰ η (I + GᴴG)`.
//!
//! General operators only get time-domain supply integrals over a probe
//! family. A negative supply is a constructive witness of non-passivity;
//! nonnegative supplies are evidence, never a certificate.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::signals::Signal;
use crate::systems::{FrequencyEvaluator, IoMap, StateSpace};

/// Log-spaced frequency grid with refinement tolerance. `ω = 0` is always
/// prepended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Golden-section stopping width in `ln ω`.
    pub refine_tol: f64,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::from_settings(&Settings::default())
    }
}

impl FrequencyGrid {
    pub fn from_settings(s: &Settings) -> Self {
        Self {
            min: s.freq_min,
            max: s.freq_max,
            points: s.freq_points,
            refine_tol: s.freq_refine_tol,
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        let mut w = vec![0.0];
        w.extend(crate::gain::log_grid(self.min, self.max, self.points.max(2)));
        w
    }
}

/// Minimum of a per-frequency index. `omega == None` means the minimum is
/// attained in the `ω → ∞` limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyMargin {
    pub value: f64,
    pub omega: Option<f64>,
    pub refine_tol: f64,
    /// Grid points skipped because `jω` is (numerically) a pole.
    pub resonant_skipped: usize,
    /// Whether `A` is Hurwitz. Margins of unstable systems are formal
    /// frequency-domain values only.
    pub stable: bool,
}

fn check_square(ss: &StateSpace) -> Result<()> {
    if ss.is_square() {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "passivity needs a square system, got {} outputs and {} inputs",
            ss.n_outputs(),
            ss.n_inputs()
        )))
    }
}

/// `λ_min(He G)`.
pub fn pr_index(g: &CMatrix) -> f64 {
    linalg::hermitian_eigenvalues(&linalg::hermitian_part(g))
        .first()
        .copied()
        .unwrap_or(f64::INFINITY)
}

/// Largest `ε` with `He G ⪰ ε GᴴG`; `+∞` for `G = 0`, `-∞` when `He G` has
/// a component coupling the range and the kernel of `G`.
pub fn osp_index_at(g: &CMatrix) -> f64 {
    let m = g.ncols();
    if m == 1 && g.nrows() == 1 {
        let z = g[(0, 0)];
        let mag2 = z.norm_sqr();
        return if mag2 == 0.0 { f64::INFINITY } else { z.re / mag2 };
    }
    let svd = g.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    if s_max == 0.0 {
        return f64::INFINITY;
    }
    let v = v_t.adjoint();
    let h = v.adjoint() * linalg::hermitian_part(g) * &v;
    let range: Vec<usize> = (0..m).filter(|&i| s[i] > 1e-10 * s_max).collect();
    let kernel: Vec<usize> = (0..m).filter(|&i| s[i] <= 1e-10 * s_max).collect();
    let h_scale = h.norm().max(f64::MIN_POSITIVE);
    for &i in &range {
        for &j in &kernel {
            if h[(i, j)].norm() > 1e-9 * h_scale {
                return f64::NEG_INFINITY;
            }
        }
    }
    let r = range.len();
    let reduced = CMatrix::from_fn(r, r, |a, b| {
        let (i, j) = (range[a], range[b]);
        h[(i, j)] / Complex::new(s[i] * s[j], 0.0)
    });
    pr_index(&reduced)
}

/// Largest `η` with `He G ⪰ η (I + GᴴG)`.
pub fn strict_index_at(g: &CMatrix) -> f64 {
    let m = g.ncols();
    let svd = g.clone().svd(false, true);
    let v = svd.v_t.expect("requested V").adjoint();
    let scale = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            let s = svd.singular_values.get(i).copied().unwrap_or(0.0);
            Complex::new(1.0 / (1.0 + s * s).sqrt(), 0.0)
        } else {
            Complex::new(0.0, 0.0)
        }
    });
    let w = &v * scale * v.adjoint();
    pr_index(&(&w * linalg::hermitian_part(g) * &w))
}

fn golden_min(mut a: f64, mut b: f64, tol: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iters = 0;
    while (b - a).abs() > tol && iters < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        iters += 1;
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimises `index(G(jω))` over the grid, refines, and compares with the
/// value at infinity.
pub fn scan_index(ss: &StateSpace, grid: &FrequencyGrid, index: fn(&CMatrix) -> f64) -> Result<FrequencyMargin> {
    check_square(ss)?;
    let fe = FrequencyEvaluator::new(ss);
    let eval = |w: f64| fe.eval(w).map(|g| index(&g)).unwrap_or(f64::INFINITY);
    let omegas = grid.omegas();
    let mut skipped = 0;
    let mut best = (f64::INFINITY, None::<usize>);
    for (i, &w) in omegas.iter().enumerate() {
        if fe.is_resonant(w) {
            skipped += 1;
            continue;
        }
        let v = eval(w);
        if v < best.0 {
            best = (v, Some(i));
        }
    }
    let mut out = FrequencyMargin {
        value: best.0,
        omega: best.1.map(|i| omegas[i]),
        refine_tol: grid.refine_tol,
        resonant_skipped: skipped,
        stable: ss.n_states() == 0 || ss.is_hurwitz(),
    };
    if let Some(i) = best.1 {
        if best.0.is_finite() {
            let lo = omegas[i.saturating_sub(1)];
            let hi = omegas[(i + 1).min(omegas.len() - 1)];
            let (w, v) = if lo == 0.0 {
                golden_min(lo, hi, grid.refine_tol * hi.max(f64::MIN_POSITIVE), &eval)
            } else {
                let (x, v) = golden_min(lo.ln(), hi.ln(), grid.refine_tol, &|x| eval(x.exp()));
                (x.exp(), v)
            };
            if v < out.value {
                out.value = v;
                out.omega = Some(w);
            }
        }
    }
    let at_inf = index(&linalg::to_complex(ss.d()));
    if at_inf < out.value {
        out.value = at_inf;
        out.omega = None;
    }
    Ok(out)
}

/// Positive-real margin `min_ω λ_min(He G(jω))`; nonnegative means passive.
pub fn pr_margin(ss: &StateSpace, grid: &FrequencyGrid) -> Result<FrequencyMargin> {
    scan_index(ss, grid, pr_index)
}

/// Output-strict-passivity index `ε*`; negative values quantify the deficit.
pub fn osp_index(ss: &StateSpace, grid: &FrequencyGrid) -> Result<FrequencyMargin> {
    scan_index(ss, grid, osp_index_at)
}

/// Joint index `η` with `∫uᵀy ≥ η(‖u‖² + ‖y‖²)`.
pub fn strict_passivity_index(ss: &StateSpace, grid: &FrequencyGrid) -> Result<FrequencyMargin> {
    scan_index(ss, grid, strict_index_at)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PassivityMethod {
    FrequencyGrid,
    EmpiricalProbes,
}

/// Where the minimum was attained. For frequency reports `frequency ==
/// None` with `probe == None` denotes `ω → ∞`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Witness {
    pub frequency: Option<f64>,
    pub probe: Option<usize>,
    pub horizon: Option<f64>,
    pub supply: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassivityReport {
    /// Input-strictness index.
    pub delta: f64,
    /// Output-strictness index.
    pub epsilon: f64,
    /// Joint index `η` (LTI only).
    pub joint: Option<f64>,
    pub method: PassivityMethod,
    pub witness: Witness,
    pub min_supply: Option<f64>,
    pub refine_tol: Option<f64>,
    pub stable: Option<bool>,
    pub certified: bool,
    pub caveat: String,
}

impl PassivityReport {
    pub fn is_passive(&self, tol: f64) -> bool {
        match self.method {
            PassivityMethod::FrequencyGrid => self.delta >= -tol,
            PassivityMethod::EmpiricalProbes => self.min_supply.map_or(true, |s| s >= -tol),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serialises")
    }
}

/// Frequency-domain report for an LTI system.
pub fn lti_passivity_report(ss: &StateSpace, grid: &FrequencyGrid) -> Result<PassivityReport> {
    let pr = pr_margin(ss, grid)?;
    let osp = osp_index(ss, grid)?;
    let joint = strict_passivity_index(ss, grid)?;
    let caveat = if pr.stable {
        "frequency-sampled: indices are exact at the sampled and refined frequencies; \
         a dip narrower than the grid spacing can be missed"
    } else {
        "A is not Hurwitz: indices are formal frequency-domain values and do not certify passivity"
    };
    Ok(PassivityReport {
        delta: pr.value,
        epsilon: osp.value,
        joint: Some(joint.value),
        method: PassivityMethod::FrequencyGrid,
        witness: Witness { frequency: pr.omega, ..Witness::default() },
        min_supply: None,
        refine_tol: Some(grid.refine_tol),
        stable: Some(pr.stable),
        certified: pr.stable,
        caveat: caveat.to_string(),
    })
}

/// Time-domain supply `∫_0^T uᵀ op(u) dt` over probes and horizons. An
/// empty `horizons` list means every sample time of the probe grid.
///
/// `delta` and `epsilon` are half of the worst ratios supply/‖P_T u‖² and
/// supply/‖P_T y‖². Together they satisfy the joint inequality on every
/// evaluated pair.
pub fn empirical_passivity_deficit(op: &dyn IoMap, probes: &[Signal], horizons: &[f64]) -> Result<PassivityReport> {
    if op.input_dim() != op.output_dim() {
        return Err(Error::dim("passivity needs a square operator"));
    }
    let mut min_supply = f64::INFINITY;
    let mut witness = Witness::default();
    let (mut delta_fit, mut eps_fit) = (f64::INFINITY, f64::INFINITY);
    for (i, u) in probes.iter().enumerate() {
        let y = op.apply(u)?;
        let supply = u.cumulative_inner(&y)?;
        let uu = u.cumulative_inner(u)?;
        let yy = y.cumulative_inner(&y)?;
        let grid = u.grid();
        let ks: Vec<usize> = if horizons.is_empty() {
            (1..grid.n_samples()).collect()
        } else {
            let mut ks = Vec::with_capacity(horizons.len());
            for &t in horizons {
                if !(t >= 0.0) {
                    return Err(Error::arg(format!("horizon {t} must be nonnegative")));
                }
                ks.push(grid.index_at_or_before(t.min(grid.horizon())));
            }
            ks
        };
        for k in ks {
            let s = supply[k];
            if s < min_supply {
                min_supply = s;
                witness = Witness {
                    frequency: None,
                    probe: Some(i),
                    horizon: Some(grid.time(k)),
                    supply: Some(s),
                };
            }
            if uu[k] > 0.0 {
                delta_fit = delta_fit.min(s / uu[k]);
            }
            if yy[k] > 0.0 {
                eps_fit = eps_fit.min(s / yy[k]);
            }
        }
    }
    let caveat = if probes.is_empty() {
        "no probes supplied: the report is vacuous"
    } else if min_supply < 0.0 {
        "negative supply found: the stored probe and horizon are a constructive non-passivity witness"
    } else {
        "empirical evidence only: nonnegative supplies on a finite probe family do not certify passivity"
    };
    Ok(PassivityReport {
        delta: 0.5 * delta_fit,
        epsilon: 0.5 * eps_fit,
        joint: None,
        method: PassivityMethod::EmpiricalProbes,
        witness,
        min_supply: if probes.is_empty() { None } else { Some(min_supply) },
        refine_tol: None,
        stable: None,
        certified: false,
        caveat: caveat.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::probes::{family, ProbeSpec};
    use crate::signals::TimeGrid;
    use crate::systems::{GainProfile, OperatorExpr};

    fn grid() -> FrequencyGrid {
        FrequencyGrid::default()
    }

    #[test]
    fn first_order_margin_is_zero_at_infinity() {
        let m = pr_margin(&StateSpace::first_order(1.0, 1.0).unwrap(), &grid()).unwrap();
        assert!(m.value.abs() < 1e-7 && m.value >= 0.0, "{}", m.value);
    }

    #[test]
    fn negative_damping_fails_at_dc() {
        let m = pr_margin(&StateSpace::mass(1.0, -0.5).unwrap(), &grid()).unwrap();
        assert!((m.value + 2.0).abs() < 1e-9);
        assert_eq!(m.omega, Some(0.0));
        assert!(!m.stable);
    }

    #[test]
    fn static_positive_definite() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let m = pr_margin(&StateSpace::static_gain(d).unwrap(), &grid()).unwrap();
        assert!((m.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn osp_examples() {
        for d in [2.0, 1.0, 0.3, -0.7] {
            let e = osp_index(&StateSpace::first_order(1.0, d).unwrap(), &grid()).unwrap();
            assert!((e.value - d).abs() < 1e-9, "{d}: {}", e.value);
        }
        let one = StateSpace::static_gain(DMatrix::identity(1, 1)).unwrap();
        assert!((osp_index(&one, &grid()).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn osp_matrix_matches_scalar_on_diagonal() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let ss = StateSpace::static_gain(d).unwrap();
        assert!((osp_index(&ss, &grid()).unwrap().value - 0.5).abs() < 1e-12);
        let rank_one = StateSpace::static_gain(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((osp_index(&rank_one, &grid()).unwrap().value - 1.0).abs() < 1e-12);
        let nilpotent = StateSpace::static_gain(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(osp_index(&nilpotent, &grid()).unwrap().value, f64::NEG_INFINITY);
    }

    #[test]
    fn strict_index_of_scalar_gain() {
        // c/(1 + c²) for static c
        for c in [0.5, 1.0, 3.0] {
            let ss = StateSpace::static_gain(DMatrix::from_element(1, 1, c)).unwrap();
            let eta = strict_passivity_index(&ss, &grid()).unwrap().value;
            assert!((eta - c / (1.0 + c * c)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_square_rejected() {
        let ss = StateSpace::static_gain(DMatrix::zeros(1, 2)).unwrap();
        assert!(matches!(pr_margin(&ss, &grid()), Err(Error::Dimension(_))));
    }

    #[test]
    fn empirical_tv_gain_nonnegative() {
        let g = TimeGrid::new(0.01, 1500).unwrap();
        let probes = family(g, 1, &ProbeSpec::default());
        let op = OperatorExpr::tv_gain(1, GainProfile::SinSquared { offset: 1.0, amplitude: 1.0, omega: 1.0 }).unwrap();
        let r = empirical_passivity_deficit(&op, &probes, &[]).unwrap();
        assert!(r.min_supply.unwrap() >= 0.0);
        assert!(!r.certified);
    }

    #[test]
    fn empirical_witness_for_unstable_pole() {
        let g = TimeGrid::new(0.01, 2000).unwrap();
        let probes = family(g, 1, &ProbeSpec::default());
        let op = OperatorExpr::lti(StateSpace::first_order(1.0, -0.1).unwrap());
        let r = empirical_passivity_deficit(&op, &probes, &[5.0, 10.0, 20.0]).unwrap();
        assert!(r.min_supply.unwrap() < 0.0);
        assert!(r.witness.probe.is_some() && r.witness.horizon.is_some());
    }

    #[test]
    fn empirical_scaled_identity_split() {
        let g = TimeGrid::new(0.01, 500).unwrap();
        let probes = family(g, 2, &ProbeSpec::default());
        let op = OperatorExpr::identity(2, 0.5).unwrap();
        let r = empirical_passivity_deficit(&op, &probes, &[1.0, 5.0]).unwrap();
        assert!((r.delta - 0.25).abs() < 1e-12);
        assert!((r.epsilon - 1.0).abs() < 1e-12);
    }
}
