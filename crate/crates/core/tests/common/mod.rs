#![allow(dead_code)]

use dissipcert::passivity::{osp_index, pr_margin, FrequencyGrid};
use dissipcert::systems::StateSpace;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Random Hurwitz system with spectral abscissa in `[-2, -0.05]`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> StateSpace {
    let a0 = uniform(rng, n, n, 1.0);
    let shift = dissipcert::linalg::spectral_abscissa(&a0) + rng.gen_range(0.05..2.0);
    let a = a0 - DMatrix::identity(n, n) * shift;
    StateSpace::new(a, uniform(rng, n, m, 1.0), uniform(rng, p, n, 1.0), uniform(rng, p, m, 0.5)).unwrap()
}

/// Positive-real system `Bᵀ(sI - A)⁻¹B + D` with `A + Aᵀ ≺ 0` and `D + Dᵀ ⪰ 0`
/// (storage `xᵀx/2`).
pub fn random_passive(rng: &mut ChaCha8Rng, n: usize, m: usize, feedthrough: f64) -> StateSpace {
    let l = uniform(rng, n, n, 1.0);
    let s = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
    let k0 = uniform(rng, n, n, 1.0);
    let k = &k0 - k0.transpose();
    let a = -(s + k);
    let b = uniform(rng, n, m, 1.0);
    let c = b.transpose();
    let r = uniform(rng, m, m, 1.0);
    let d = &r * r.transpose() * (feedthrough / m as f64) + DMatrix::identity(m, m) * feedthrough;
    StateSpace::new(a, b, c, d).unwrap()
}

/// Rejection sample of a passive system whose OSP index (and, if
/// `min_delta` is set, PR margin) exceeds the given levels.
pub fn random_strict(rng: &mut ChaCha8Rng, n: usize, m: usize, min_eps: f64, min_delta: Option<f64>) -> (StateSpace, f64, f64) {
    let grid = FrequencyGrid::default();
    loop {
        let fd = if min_delta.is_some() { rng.gen_range(0.2..1.5) } else { rng.gen_range(0.0..1.0) };
        let ss = random_passive(rng, n, m, fd);
        let eps = osp_index(&ss, &grid).unwrap().value;
        let delta = pr_margin(&ss, &grid).unwrap().value;
        if eps > min_eps && min_delta.map_or(true, |d| delta >= d) {
            return (ss, eps, delta);
        }
    }
}

pub fn dense_log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    dissipcert::gain::log_grid(lo, hi, n)
}
