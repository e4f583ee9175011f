//! Numerical defaults in one place. Every field of [`Settings`] can be
//! overridden through an environment variable `DISSIPCERT_<FIELD>` (field
//! name upper-cased), e.g. `DISSIPCERT_FREQ_POINTS=4000`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Condition-number ceiling for `I + D2 D1` in an algebraic loop.
pub const WELL_POSED_COND_LIMIT: f64 = 1e8;

/// `|Re λ| <= IMAG_AXIS_TOL * (1 + |λ|)` counts as on the imaginary axis.
/// The most sensitive constant in the H-infinity bisection.
pub const IMAG_AXIS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub freq_min: f64,
    pub freq_max: f64,
    pub freq_points: usize,
    /// Golden-section tolerance (relative, in log-frequency) for grid refinement.
    pub freq_refine_tol: f64,
    pub hinf_tol: f64,
    pub loop_damping: f64,
    pub loop_max_iter: usize,
    pub loop_tol: f64,
    /// Internal stability requires spectral abscissa < -stability_margin.
    pub stability_margin: f64,
    /// Instability witnesses need spectral abscissa >= witness_margin.
    pub witness_margin: f64,
    pub well_posed_cond: f64,
    pub ensemble_generators: usize,
    pub ensemble_shifts: usize,
    pub falsify_grid: usize,
    pub falsify_budget: usize,
    /// Trajectory-energy / input-energy ratio taken as instability evidence.
    pub blowup_ratio: f64,
    pub certification_tol: f64,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            freq_min: 1e-4,
            freq_max: 1e4,
            freq_points: 2000,
            freq_refine_tol: 1e-10,
            hinf_tol: 1e-7,
            loop_damping: 0.5,
            loop_max_iter: 200,
            loop_tol: 1e-10,
            stability_margin: 1e-9,
            witness_margin: 1e-6,
            well_posed_cond: WELL_POSED_COND_LIMIT,
            ensemble_generators: 64,
            ensemble_shifts: 4,
            falsify_grid: 32,
            falsify_budget: 2048,
            blowup_ratio: 1e6,
            certification_tol: 1e-9,
            seed: 7,
        }
    }
}

macro_rules! settable {
    ($($field:ident),*) => {
        impl Settings {
            /// Field names accepted by [`Settings::set`].
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Parses `raw` into the named field.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = raw.trim().parse().map_err(|_| {
                            Error::parse(key, format!("cannot parse `{raw}`"))
                        })?;
                    })*
                    _ => return Err(Error::arg(format!("unknown setting `{key}`"))),
                }
                Ok(())
            }
        }
    };
}

settable!(
    freq_min,
    freq_max,
    freq_points,
    freq_refine_tol,
    hinf_tol,
    loop_damping,
    loop_max_iter,
    loop_tol,
    stability_margin,
    witness_margin,
    well_posed_cond,
    ensemble_generators,
    ensemble_shifts,
    falsify_grid,
    falsify_budget,
    blowup_ratio,
    certification_tol,
    seed
);

impl Settings {
    /// Defaults with `DISSIPCERT_*` environment overrides applied.
    pub fn from_env() -> Result<Self> {
        let mut s = Self::default();
        for field in Self::FIELDS {
            let key = format!("DISSIPCERT_{}", field.to_uppercase());
            if let Ok(raw) = std::env::var(&key) {
                s.set(field, &raw).map_err(|e| match e {
                    Error::Parse { message, .. } => Error::parse(key, message),
                    other => other,
                })?;
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.freq_min > 0.0 && self.freq_max > self.freq_min) {
            return Err(Error::arg("frequency range must satisfy 0 < freq_min < freq_max"));
        }
        if self.freq_points < 2 {
            return Err(Error::arg("freq_points must be at least 2"));
        }
        if !(self.loop_damping > 0.0 && self.loop_damping <= 1.0) {
            return Err(Error::arg("loop_damping must lie in (0, 1]"));
        }
        if self.hinf_tol <= 0.0 || self.loop_tol <= 0.0 {
            return Err(Error::arg("tolerances must be positive"));
        }
        Ok(())
    }
}
