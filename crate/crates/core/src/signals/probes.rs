//! The fixed probe family used by every empirical (time-domain) analysis.
//!
//! Version 1 of the family holds unit-energy sinusoid bursts at log-spaced
//! frequencies per channel direction, followed by exponentially windowed steps
//! and seeded band-limited noise. Reports record [`PROBE_FAMILY_VERSION`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

use super::{l2_norm, Signal, TimeGrid};

pub const PROBE_FAMILY_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ProbeSpec {
    /// Number of sinusoid burst frequencies.
    pub n_sines: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Decay rates of the windowed steps.
    pub step_decays: Vec<f64>,
    pub n_noise: usize,
    /// Noise cut-off as a fraction of the Nyquist frequency.
    pub noise_band: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            n_sines: 12,
            omega_min: 0.05,
            omega_max: 20.0,
            step_decays: vec![0.2, 1.0, 5.0],
            n_noise: 4,
            noise_band: 0.05,
            seed: 0x5eed,
        }
    }
}

/// Sinusoid at `omega` under a raised-cosine window spanning the horizon,
/// normalised to unit energy.
pub fn sine_burst(grid: TimeGrid, omega: f64) -> Signal {
    let t_end = grid.horizon();
    let s = Signal::scalar_fn(grid, |t| {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t / t_end).cos();
        w * (omega * t).sin()
    });
    normalise(s)
}

pub fn decaying_step(grid: TimeGrid, rate: f64) -> Signal {
    normalise(Signal::scalar_fn(grid, |t| (-rate * t).exp()))
}

/// White noise passed through a first-order low-pass with cut-off
/// `band * pi / dt`, starting from zero.
pub fn band_limited_noise(grid: TimeGrid, band: f64, rng: &mut ChaCha8Rng) -> Signal {
    let wc = band * std::f64::consts::PI / grid.dt();
    let a = (-wc * grid.dt()).exp();
    let mut state = 0.0;
    let mut values = Vec::with_capacity(grid.n_samples());
    values.push(0.0);
    for _ in 1..grid.n_samples() {
        let w: f64 = rng.gen_range(-1.0..1.0);
        state = a * state + (1.0 - a) * w;
        values.push(state);
    }
    normalise(Signal::from_raw(grid, 1, values))
}

fn normalise(s: Signal) -> Signal {
    let n = l2_norm(&s);
    if n > 0.0 {
        s.scale(1.0 / n)
    } else {
        s
    }
}

/// Embeds a scalar probe into `channels` channels along direction `dir`.
pub fn along(s: &Signal, dir: &[f64]) -> Signal {
    let grid = s.grid();
    let channels = dir.len();
    let base = s.channel(0);
    let mut values = Vec::with_capacity(grid.n_samples() * channels);
    for x in base {
        values.extend(dir.iter().map(|d| d * x));
    }
    Signal::from_raw(grid, channels, values)
}

/// Scalar probe shapes of the family, in a fixed order.
pub fn scalar_family(grid: TimeGrid, spec: &ProbeSpec) -> Vec<Signal> {
    let mut out = Vec::new();
    let n = spec.n_sines.max(1);
    for i in 0..n {
        let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let omega = spec.omega_min * (spec.omega_max / spec.omega_min).powf(frac);
        out.push(sine_burst(grid, omega));
    }
    for &r in &spec.step_decays {
        out.push(decaying_step(grid, r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.n_noise {
        out.push(band_limited_noise(grid, spec.noise_band, &mut rng));
    }
    out
}

/// Full probe family on `channels` channels: every scalar shape along each
/// coordinate direction, plus along the all-ones and alternating-sign
/// directions when there is more than one channel.
pub fn family(grid: TimeGrid, channels: usize, spec: &ProbeSpec) -> Vec<Signal> {
    let shapes = scalar_family(grid, spec);
    let mut dirs: Vec<Vec<f64>> = (0..channels)
        .map(|c| (0..channels).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
        .collect();
    if channels > 1 {
        let s = 1.0 / (channels as f64).sqrt();
        dirs.push(vec![s; channels]);
        dirs.push((0..channels).map(|i| if i % 2 == 0 { s } else { -s }).collect());
    }
    let mut out = Vec::new();
    for d in &dirs {
        for s in &shapes {
            out.push(along(s, d));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_is_deterministic_and_unit_energy() {
        let g = TimeGrid::new(0.05, 400).unwrap();
        let a = family(g, 2, &ProbeSpec::default());
        let b = family(g, 2, &ProbeSpec::default());
        assert_eq!(a, b);
        for p in &a {
            assert!((l2_norm(p) - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.len(), 4 * (12 + 3 + 4));
    }
}
