//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, Schur};

pub type CMatrix = DMatrix<Complex<f64>>;

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    for tol in [f64::EPSILON, 64.0 * f64::EPSILON, 4096.0 * f64::EPSILON] {
        if let Some(schur) = Schur::try_new(a.clone(), tol, SCHUR_MAX_ITER) {
            return schur.complex_eigenvalues().iter().copied().collect();
        }
        let q = reflector(a.nrows());
        if let Some(schur) = Schur::try_new(&q * a * &q, tol, SCHUR_MAX_ITER) {
            return schur.complex_eigenvalues().iter().copied().collect();
        }
    }
    a.complex_eigenvalues().iter().copied().collect()
}

const SCHUR_MAX_ITER: usize = 20_000;

/// Fixed Householder reflector `I - 2vvᵀ/vᵀv`, symmetric and orthogonal.
fn reflector(n: usize) -> DMatrix<f64> {
    let v = DMatrix::from_fn(n, 1, |i, _| 1.0 + 0.37 * (i as f64 + 1.0).sqrt());
    let vv = v.norm_squared();
    DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / vv)
}

/// Largest real part among the eigenvalues; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn sigma_max_c(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// 2-norm condition number; `inf` when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex::new(x, 0.0))
}

/// Hermitian part (M + M^H)/2.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Orthogonality defect max(|sigma_max - 1|, |sigma_min - 1|).
pub fn orthogonality_defect(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() || m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abscissa_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -1.0]);
        assert!((spectral_abscissa(&a) + 1.0).abs() < 1e-12);
        assert_eq!(spectral_abscissa(&DMatrix::zeros(0, 0)), f64::NEG_INFINITY);
    }

    #[test]
    fn hermitian_spectrum_sorted() {
        let m = to_complex(&DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]));
        assert_eq!(hermitian_eigenvalues(&m).len(), 2);
        assert!((hermitian_eigenvalues(&m)[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let (s, c) = 0.3f64.sin_cos();
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!(orthogonality_defect(&r) < 1e-12);
        assert!(orthogonality_defect(&(r * 2.0)) > 0.5);
    }
}
