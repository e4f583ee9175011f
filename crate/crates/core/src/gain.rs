//! L2-gain computation.
//!
//! For LTI systems the gain is the H-infinity norm, computed by bisection on
//! `γ`: for a Hurwitz `A` and `γ > σ_max(D)`, `γ` is below the norm exactly
//! when the Hamiltonian
//!
//! ```text
//! H(γ) = [ A + B R⁻¹ DᵀC          B R⁻¹ Bᵀ          ]     R = γ²I - DᵀD
//!        [ -Cᵀ(I + D R⁻¹ Dᵀ)C     -(A + B R⁻¹ DᵀC)ᵀ ]
//! ```
//!
//! has an eigenvalue on the imaginary axis. The imaginary-axis eigenvalues
//! also give frequencies at which `σ_max(G(jω))` is evaluated to tighten the
//! lower end of the bracket. For general operators only a probe-based lower
//! bound is available.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::IMAG_AXIS_TOL;
use crate::error::{Error, Result};
use crate::linalg;
use crate::signals::{l2_norm, Signal};
use crate::systems::{FrequencyEvaluator, IoMap, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMethod {
    HamiltonianBisection,
    FrequencyGrid,
    /// Certifies only a lower bound on the true gain.
    EmpiricalLowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCertificate {
    pub value: f64,
    pub method: GainMethod,
    pub tol: f64,
    pub peak_frequency: Option<f64>,
    pub lower_bound_only: bool,
}

/// Frequencies (`ω >= 0`) at which `H(γ)` has imaginary-axis eigenvalues.
fn imaginary_axis_frequencies(ss: &StateSpace, gamma: f64) -> Option<Vec<f64>> {
    let n = ss.n_states();
    let (a, b, c, d) = (ss.a(), ss.b(), ss.c(), ss.d());
    let m = d.ncols();
    let p = d.nrows();
    let r = DMatrix::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let r_inv = r.try_inverse()?;
    let ar = a + b * &r_inv * d.transpose() * c;
    let q = c.transpose() * (DMatrix::identity(p, p) + d * &r_inv * d.transpose()) * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ar);
    h.view_mut((0, n), (n, n)).copy_from(&(b * &r_inv * b.transpose()));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-ar.transpose()));
    let mut freqs: Vec<f64> = linalg::eigenvalues(&h)
        .into_iter()
        .filter(|l| l.re.abs() <= IMAG_AXIS_TOL * (1.0 + l.norm()) && l.im >= 0.0)
        .map(|l| l.im)
        .collect();
    freqs.sort_by(f64::total_cmp);
    Some(freqs)
}

fn sigma_at(fe: &FrequencyEvaluator, omega: f64) -> f64 {
    fe.eval(omega).map(|g| linalg::sigma_max_c(&g)).unwrap_or(0.0)
}

/// H-infinity norm of a stable LTI system to absolute accuracy `tol`.
pub fn hinf_norm(ss: &StateSpace, tol: f64) -> Result<GainCertificate> {
    if !(tol > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let d_norm = linalg::sigma_max(ss.d());
    if ss.n_states() == 0 {
        return Ok(GainCertificate {
            value: d_norm,
            method: GainMethod::HamiltonianBisection,
            tol: 0.0,
            peak_frequency: None,
            lower_bound_only: false,
        });
    }
    let abscissa = ss.spectral_abscissa();
    if !(abscissa < 0.0) {
        return Err(Error::Unbounded { abscissa });
    }
    let fe = FrequencyEvaluator::new(ss);

    let mut lo = d_norm;
    let mut peak: Option<f64> = None;
    let probe = |omega: f64, lo: &mut f64, peak: &mut Option<f64>| {
        let s = sigma_at(&fe, omega);
        if s > *lo {
            *lo = s;
            *peak = Some(omega);
        }
    };
    probe(0.0, &mut lo, &mut peak);
    for pole in ss.poles() {
        probe(pole.im.abs(), &mut lo, &mut peak);
        probe(pole.norm(), &mut lo, &mut peak);
    }

    let spread = linalg::sigma_max(ss.c()) * linalg::sigma_max(ss.b());
    let mut hi = d_norm + 2.0 * spread / (-abscissa);
    hi = hi.max(lo * (1.0 + 1e-6) + tol);
    let mut doublings = 0;
    while imaginary_axis_frequencies(ss, hi).map_or(true, |f| !f.is_empty()) {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Unbounded { abscissa });
        }
    }

    while hi - lo > tol {
        let gamma = 0.5 * (lo + hi);
        match imaginary_axis_frequencies(ss, gamma) {
            Some(freqs) if !freqs.is_empty() => {
                lo = gamma;
                // test the crossing frequencies and the midpoints between them
                let mut cands = freqs.clone();
                cands.extend(freqs.windows(2).map(|w| 0.5 * (w[0] + w[1])));
                for w in cands {
                    probe(w, &mut lo, &mut peak);
                }
                lo = lo.min(hi);
            }
            Some(_) => hi = gamma,
            // γ numerically at σ_max(D): treat as below the norm
            None => lo = gamma,
        }
    }
    Ok(GainCertificate {
        value: 0.5 * (lo + hi),
        method: GainMethod::HamiltonianBisection,
        tol,
        peak_frequency: peak.or(Some(f64::INFINITY)).filter(|w| w.is_finite()),
        lower_bound_only: false,
    })
}

/// `max_ω σ_max(G(jω))` over a supplied grid; resonant points are skipped.
pub fn grid_gain(ss: &StateSpace, omegas: &[f64]) -> GainCertificate {
    let fe = FrequencyEvaluator::new(ss);
    let mut best = (linalg::sigma_max(ss.d()), None);
    for &w in omegas {
        let s = sigma_at(&fe, w);
        if s > best.0 {
            best = (s, Some(w));
        }
    }
    GainCertificate {
        value: best.0,
        method: GainMethod::FrequencyGrid,
        tol: f64::NAN,
        peak_frequency: best.1,
        lower_bound_only: true,
    }
}

/// `σ_max(G(jω))` at each frequency (NaN at resonance); used for plots.
pub fn sigma_sweep(ss: &StateSpace, omegas: &[f64]) -> Vec<f64> {
    let fe = FrequencyEvaluator::new(ss);
    omegas
        .iter()
        .map(|&w| fe.eval(w).map(|g| linalg::sigma_max_c(&g)).unwrap_or(f64::NAN))
        .collect()
}

/// Lower bound `max_u ||op(u)||_2 / ||u||_2` over the probes.
pub fn empirical_gain_lb(op: &dyn IoMap, probes: &[Signal]) -> Result<GainCertificate> {
    if probes.is_empty() {
        return Err(Error::arg("empirical gain needs at least one probe"));
    }
    let mut best = 0.0f64;
    for (i, u) in probes.iter().enumerate() {
        let nu = l2_norm(u);
        if nu == 0.0 {
            return Err(Error::arg(format!("probe {i} is identically zero")));
        }
        let y = op.apply(u)?;
        best = best.max(l2_norm(&y) / nu);
    }
    Ok(GainCertificate {
        value: best,
        method: GainMethod::EmpiricalLowerBound,
        tol: 0.0,
        peak_frequency: None,
        lower_bound_only: true,
    })
}

/// `n` log-spaced frequencies on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
