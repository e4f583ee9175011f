//! Uniformly sampled signals on a finite horizon `[0, T]`, standing in for
//! elements of the extended space L2e, together with the elementary
//! operators every definition is built from: inner product, truncation,
//! right shift and the L2 norm.
//!
//! A [`TimeGrid`] with step `dt` and `n_steps` intervals has horizon
//! `T = dt * n_steps` and carries `n_steps + 1` samples at `t_k = k * dt`,
//! `k = 0..=n_steps`. All integrals are trapezoidal.

mod io;
pub mod probes;

pub use io::{read_csv, read_csv_str, write_csv, write_csv_string};
pub(crate) use io::write_columns;

use crate::error::{Error, Result};

/// Relative tolerance used when a time value must land on the grid.
const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::arg(format!("time step must be positive and finite, got {dt}")));
        }
        if n_steps < 1 {
            return Err(Error::arg("time grid needs at least one step"));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid covering `[0, horizon]` with step `dt`; the horizon is rounded
    /// to the nearest whole number of steps.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::arg(format!("horizon must be positive, got {horizon}")));
        }
        let n = (horizon / dt).round().max(1.0) as usize;
        Self::new(dt, n)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_samples()).map(move |k| self.time(k))
    }

    /// Index of the last sample with `t_k <= t` (rounding down).
    pub fn index_at_or_before(&self, t: f64) -> usize {
        let x = t / self.dt;
        let k = (x + GRID_SNAP * x.abs().max(1.0)).floor();
        (k.max(0.0) as usize).min(self.n_steps)
    }

    /// Number of whole steps in `tau`, or `None` if `tau` is off the grid.
    pub fn steps_exact(&self, tau: f64) -> Option<usize> {
        let x = tau / self.dt;
        let k = x.round();
        if (x - k).abs() <= GRID_SNAP * x.abs().max(1.0) {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Trapezoid weight of sample `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Vector-valued signal sampled on a [`TimeGrid`]; samples are stored
/// row-major (`values[k * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    grid: TimeGrid,
    channels: usize,
    values: Vec<f64>,
}

impl Signal {
    pub fn new(grid: TimeGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::dim("signal needs at least one channel"));
        }
        if values.len() != grid.n_samples() * channels {
            return Err(Error::dim(format!(
                "expected {} samples x {} channels = {} values, got {}",
                grid.n_samples(),
                channels,
                grid.n_samples() * channels,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite sample at step {} channel {}",
                i / channels,
                i % channels
            )));
        }
        Ok(Self { grid, channels, values })
    }

    pub fn zeros(grid: TimeGrid, channels: usize) -> Self {
        Self {
            grid,
            channels,
            values: vec![0.0; grid.n_samples() * channels],
        }
    }

    /// Builds a signal by evaluating `f(t, out)` at each grid time.
    pub fn from_fn(grid: TimeGrid, channels: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.n_samples() * channels];
        for (k, row) in values.chunks_exact_mut(channels).enumerate() {
            f(grid.time(k), row);
        }
        Self { grid, channels, values }
    }

    pub fn scalar_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, 1, |t, out| out[0] = f(t))
    }

    pub(crate) fn from_raw(grid: TimeGrid, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_samples() * channels);
        Self { grid, channels, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.grid.n_samples()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn sample_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn check_compatible(&self, other: &Signal) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::dim("signals live on different time grids"));
        }
        if self.channels != other.channels {
            return Err(Error::dim(format!(
                "channel count {} vs {}",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Signal::from_raw(self.grid, self.channels, values))
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Signal::from_raw(self.grid, self.channels, values))
    }

    pub fn scale(&self, c: f64) -> Signal {
        Signal::from_raw(self.grid, self.channels, self.values.iter().map(|v| c * v).collect())
    }

    /// Stacks channels of several signals on a shared grid.
    pub fn stack(parts: &[&Signal]) -> Result<Signal> {
        let first = parts.first().ok_or_else(|| Error::arg("nothing to stack"))?;
        let grid = first.grid;
        if parts.iter().any(|p| p.grid != grid) {
            return Err(Error::dim("stacked signals live on different grids"));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut values = Vec::with_capacity(grid.n_samples() * channels);
        for k in 0..grid.n_samples() {
            for p in parts {
                values.extend_from_slice(p.sample(k));
            }
        }
        Ok(Signal::from_raw(grid, channels, values))
    }

    /// Channels `start..start + count` as a new signal.
    pub fn select(&self, start: usize, count: usize) -> Result<Signal> {
        if count == 0 || start + count > self.channels {
            return Err(Error::dim(format!(
                "channel range {start}..{} outside 0..{}",
                start + count,
                self.channels
            )));
        }
        let mut values = Vec::with_capacity(self.len() * count);
        for k in 0..self.len() {
            values.extend_from_slice(&self.sample(k)[start..start + count]);
        }
        Ok(Signal::from_raw(self.grid, count, values))
    }

    /// Running integral `int_0^{t_k} u^T v dt` at every sample.
    pub fn cumulative_inner(&self, other: &Signal) -> Result<Vec<f64>> {
        self.check_compatible(other)?;
        let dt = self.grid.dt;
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        let mut prev = dot(self.sample(0), other.sample(0));
        out.push(0.0);
        for k in 1..self.len() {
            let cur = dot(self.sample(k), other.sample(k));
            acc += 0.5 * dt * (prev + cur);
            out.push(acc);
            prev = cur;
        }
        Ok(out)
    }

    /// `max_k |u_k|_inf`.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trapezoidal approximation of `int_0^T u(t)^T v(t) dt`.
pub fn inner_product(u: &Signal, v: &Signal) -> Result<f64> {
    u.check_compatible(v)?;
    let g = u.grid;
    Ok((0..u.len()).map(|k| g.weight(k) * dot(u.sample(k), v.sample(k))).sum())
}

pub fn l2_norm(u: &Signal) -> f64 {
    let g = u.grid;
    let sq: f64 = (0..u.len()).map(|k| g.weight(k) * dot(u.sample(k), u.sample(k))).sum();
    sq.max(0.0).sqrt()
}

/// Truncation `P_T`: samples with `t_k <= T` are kept, later ones zeroed.
/// A `T` between grid points rounds down to the previous sample.
pub fn truncate(u: &Signal, t: f64) -> Result<Signal> {
    if !(t >= 0.0) {
        return Err(Error::arg(format!("truncation time must be non-negative, got {t}")));
    }
    if t > u.grid.horizon() * (1.0 + GRID_SNAP) {
        return Err(Error::arg(format!(
            "truncation time {t} beyond horizon {}",
            u.grid.horizon()
        )));
    }
    let last = u.grid.index_at_or_before(t);
    let mut out = u.clone();
    let cut = (last + 1) * u.channels;
    out.values[cut..].iter_mut().for_each(|v| *v = 0.0);
    Ok(out)
}

/// Right shift `S_tau`: delays by `tau` with zero fill; samples pushed past
/// the horizon are dropped. `tau` must be a whole number of steps.
pub fn shift(u: &Signal, tau: f64) -> Result<Signal> {
    if !(tau >= 0.0) {
        return Err(Error::arg(format!("shift must be non-negative, got {tau}")));
    }
    let steps = u
        .grid
        .steps_exact(tau)
        .ok_or_else(|| Error::arg(format!("shift {tau} is not a multiple of dt = {}", u.grid.dt)))?;
    Ok(shift_steps(u, steps))
}

pub fn shift_steps(u: &Signal, steps: usize) -> Signal {
    let mut out = Signal::zeros(u.grid, u.channels);
    let n = u.len();
    if steps < n {
        let c = u.channels;
        out.values[steps * c..].copy_from_slice(&u.values[..(n - steps) * c]);
    }
    out
}
