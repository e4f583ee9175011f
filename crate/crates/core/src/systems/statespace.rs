use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

/// Jω within this (relative) distance of an eigenvalue of A is treated as
/// resonance.
const RESONANCE_TOL: f64 = 1e-9;

/// Continuous-time LTI system `x' = Ax + Bu, y = Cx + Du` with zero
/// initial state. `n = 0` encodes a static gain `y = Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dim(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::dim(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        if d.nrows() == 0 || d.ncols() == 0 {
            return Err(Error::dim("system needs at least one input and one output"));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if !linalg::all_finite(m) {
                return Err(Error::arg(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { a, b, c, d })
    }

    pub fn static_gain(d: DMatrix<f64>) -> Result<Self> {
        let (p, m) = d.shape();
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, m), DMatrix::zeros(p, 0), d)
    }

    /// Scalar `k / (s + pole)` realised as `x' = -pole x + u, y = k x`.
    pub fn first_order(k: f64, pole: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, -pole),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, k),
            DMatrix::zeros(1, 1),
        )
    }

    /// Actuated mass `m v' = -d v + u`, `y = v`, i.e. `1/(ms + d)`.
    pub fn mass(m: f64, d: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::arg(format!("mass must be positive, got {m}")));
        }
        Self::new(
            DMatrix::from_element(1, 1, -d / m),
            DMatrix::from_element(1, 1, 1.0 / m),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_square(&self) -> bool {
        self.n_inputs() == self.n_outputs()
    }

    pub fn spectral_abscissa(&self) -> f64 {
        linalg::spectral_abscissa(&self.a)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa() < 0.0
    }

    pub fn poles(&self) -> Vec<Complex<f64>> {
        linalg::eigenvalues(&self.a)
    }

    /// `G(jω) = C (jωI - A)^{-1} B + D`.
    pub fn freq_response(&self, omega: f64) -> Result<CMatrix> {
        FrequencyEvaluator::new(self).eval(omega)
    }

    /// Parallel connection `self + other` (shared input, summed outputs).
    pub fn parallel(&self, other: &StateSpace) -> Result<StateSpace> {
        if self.n_inputs() != other.n_inputs() || self.n_outputs() != other.n_outputs() {
            return Err(Error::dim("parallel connection needs equal input/output sizes"));
        }
        let b = stack_rows(&self.b, &other.b);
        let c = stack_cols(&self.c, &other.c);
        StateSpace::new(linalg::block_diag(&self.a, &other.a), b, c, &self.d + &other.d)
    }

    /// Series connection: `self` first, then `next` (`y = next(self(u))`).
    pub fn then(&self, next: &StateSpace) -> Result<StateSpace> {
        if self.n_outputs() != next.n_inputs() {
            return Err(Error::dim(format!(
                "cascade: {} outputs feed {} inputs",
                self.n_outputs(),
                next.n_inputs()
            )));
        }
        let (n1, n2) = (self.n_states(), next.n_states());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        let b = stack_rows(&self.b, &(&next.b * &self.d));
        let c = stack_cols(&(&next.d * &self.c), &next.c);
        StateSpace::new(a, b, c, &next.d * &self.d)
    }

    pub fn scaled(&self, k: f64) -> StateSpace {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * k,
            d: &self.d * k,
        }
    }

    /// Negative feedback `y = self(u - back(y))`.
    pub fn feedback(&self, back: &StateSpace, cond_limit: f64) -> Result<StateSpace> {
        if self.n_outputs() != back.n_inputs() || back.n_outputs() != self.n_inputs() {
            return Err(Error::dim("feedback: dimensions do not chain"));
        }
        let (n1, n2) = (self.n_states(), back.n_states());
        let m = self.n_inputs();
        let p = self.n_outputs();
        // y = C1 x1 + D1 (u - C2 x2 - D2 y)  =>  (I + D1 D2) y = C1 x1 - D1 C2 x2 + D1 u
        let w = DMatrix::identity(p, p) + &self.d * &back.d;
        let cond = linalg::condition_number(&w);
        if !(cond < cond_limit) {
            return Err(Error::IllPosed {
                condition: cond,
                threshold: cond_limit,
            });
        }
        let w_inv = w
            .try_inverse()
            .ok_or(Error::IllPosed { condition: f64::INFINITY, threshold: cond_limit })?;
        // y = Cy x + Dy u
        let cy = &w_inv * stack_cols(&self.c, &(-(&self.d * &back.c)));
        let dy = &w_inv * &self.d;
        // e = u - C2 x2 - D2 y
        let ce = stack_cols(&DMatrix::zeros(m, n1), &(-&back.c)) - &back.d * &cy;
        let de = DMatrix::identity(m, m) - &back.d * &dy;
        let mut a = linalg::block_diag(&self.a, &back.a);
        let mut b = DMatrix::zeros(n1 + n2, m);
        // x1' = A1 x1 + B1 e ; x2' = A2 x2 + B2 y
        {
            let bx1 = &self.b * &ce;
            let bx2 = &back.b * &cy;
            let mut top = a.view_mut((0, 0), (n1, n1 + n2));
            top += &bx1;
            let mut bottom = a.view_mut((n1, 0), (n2, n1 + n2));
            bottom += &bx2;
        }
        b.view_mut((0, 0), (n1, m)).copy_from(&(&self.b * &de));
        b.view_mut((n1, 0), (n2, m)).copy_from(&(&back.b * &dy));
        StateSpace::new(a, b, cy, dy)
    }

    /// `post * G * pre` with static matrices.
    pub fn sandwich(&self, pre: &DMatrix<f64>, post: &DMatrix<f64>) -> Result<StateSpace> {
        if pre.nrows() != self.n_inputs() || post.ncols() != self.n_outputs() {
            return Err(Error::dim("multiplier sizes do not match the system"));
        }
        StateSpace::new(
            self.a.clone(),
            &self.b * pre,
            post * &self.c,
            post * &self.d * pre,
        )
    }

    /// Sub-system from input columns `inputs` to output rows `outputs`.
    pub fn select(&self, inputs: std::ops::Range<usize>, outputs: std::ops::Range<usize>) -> Result<StateSpace> {
        if inputs.end > self.n_inputs() || outputs.end > self.n_outputs() || inputs.is_empty() || outputs.is_empty() {
            return Err(Error::dim("channel selection out of range"));
        }
        StateSpace::new(
            self.a.clone(),
            self.b.columns(inputs.start, inputs.len()).into_owned(),
            self.c.rows(outputs.start, outputs.len()).into_owned(),
            self.d.view((outputs.start, inputs.start), (outputs.len(), inputs.len())).into_owned(),
        )
    }

    /// Exact zero-order-hold discretisation `(Ad, Bd)` via the exponential
    /// of the augmented block `[A B; 0 0] dt`.
    pub fn zoh(&self, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_states();
        let m = self.n_inputs();
        if n == 0 {
            return (DMatrix::zeros(0, 0), DMatrix::zeros(0, m));
        }
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * dt));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * dt));
        let e = aug.exp();
        (
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, m)).into_owned(),
        )
    }

    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        Ok(self.freq_response(0.0)?.map(|z| z.re))
    }
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols().max(bottom.ncols()));
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

pub(crate) fn stack_cols(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(left.nrows().max(right.nrows()), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

/// Repeated evaluation of `G(jω)` with the resonance check precomputed.
#[derive(Debug, Clone)]
pub struct FrequencyEvaluator {
    a: CMatrix,
    b: CMatrix,
    c: CMatrix,
    d: CMatrix,
    poles: Vec<Complex<f64>>,
}

impl FrequencyEvaluator {
    pub fn new(ss: &StateSpace) -> Self {
        Self {
            a: linalg::to_complex(&ss.a),
            b: linalg::to_complex(&ss.b),
            c: linalg::to_complex(&ss.c),
            d: linalg::to_complex(&ss.d),
            poles: ss.poles(),
        }
    }

    pub fn is_resonant(&self, omega: f64) -> bool {
        let jw = Complex::new(0.0, omega);
        self.poles
            .iter()
            .any(|p| (p - jw).norm() <= RESONANCE_TOL * (1.0 + omega.abs()))
    }

    pub fn eval(&self, omega: f64) -> Result<CMatrix> {
        let n = self.a.nrows();
        if n == 0 {
            return Ok(self.d.clone());
        }
        if self.is_resonant(omega) {
            return Err(Error::Singular { omega });
        }
        let mut m = -&self.a;
        for i in 0..n {
            m[(i, i)] += Complex::new(0.0, omega);
        }
        let x = m.lu().solve(&self.b).ok_or(Error::Singular { omega })?;
        Ok(&self.c * x + &self.d)
    }
}

/// Integrates `x' = Ax + Bu` exactly for held inputs from a column vector
/// state; exposed for the closed-loop simulators.
pub(crate) fn zoh_step(ad: &DMatrix<f64>, bd: &DMatrix<f64>, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
    let uv = DVector::from_column_slice(u);
    ad * x + bd * uv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex<f64>, b: Complex<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn dimension_checks() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 1);
        let c = DMatrix::zeros(1, 2);
        assert!(StateSpace::new(a.clone(), b.clone(), c.clone(), DMatrix::zeros(1, 1)).is_ok());
        assert!(matches!(
            StateSpace::new(a.clone(), b.clone(), c.clone(), DMatrix::zeros(2, 1)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            StateSpace::new(DMatrix::zeros(2, 3), b, c, DMatrix::zeros(1, 1)),
            Err(Error::Dimension(_))
        ));
        let mut bad = DMatrix::zeros(1, 1);
        bad[(0, 0)] = f64::NAN;
        assert!(StateSpace::static_gain(bad).is_err());
    }

    #[test]
    fn freq_response_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = StateSpace::static_gain(d.clone()).unwrap();
        assert_eq!(g.freq_response(7.0).unwrap(), linalg::to_complex(&d));

        let lp = StateSpace::first_order(1.0, 1.0).unwrap();
        assert!(close(lp.freq_response(0.0).unwrap()[(0, 0)], Complex::new(1.0, 0.0), 1e-14));
        assert!(close(lp.freq_response(1.0).unwrap()[(0, 0)], Complex::new(0.5, -0.5), 1e-14));

        let mass = StateSpace::mass(1.0, 2.0).unwrap();
        assert!(close(mass.freq_response(0.0).unwrap()[(0, 0)], Complex::new(0.5, 0.0), 1e-14));
    }

    #[test]
    fn resonance_is_an_error() {
        let osc = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(osc.freq_response(2.0), Err(Error::Singular { .. })));
        assert!(osc.freq_response(1.0).is_ok());
    }

    #[test]
    fn interconnections_match_frequency_algebra() {
        let g1 = StateSpace::first_order(2.0, 1.0).unwrap();
        let g2 = StateSpace::first_order(1.0, 3.0).unwrap();
        let w = 0.7;
        let h1 = g1.freq_response(w).unwrap()[(0, 0)];
        let h2 = g2.freq_response(w).unwrap()[(0, 0)];
        let par = g1.parallel(&g2).unwrap().freq_response(w).unwrap()[(0, 0)];
        assert!(close(par, h1 + h2, 1e-12));
        let ser = g1.then(&g2).unwrap().freq_response(w).unwrap()[(0, 0)];
        assert!(close(ser, h1 * h2, 1e-12));
        let fb = g1.feedback(&g2, 1e8).unwrap().freq_response(w).unwrap()[(0, 0)];
        assert!(close(fb, h1 / (1.0 + h1 * h2), 1e-12));
        let half = StateSpace::static_gain(DMatrix::from_element(1, 1, 0.5)).unwrap();
        let fbd = half.feedback(&half, 1e8).unwrap().freq_response(w).unwrap()[(0, 0)];
        assert!(close(fbd, Complex::new(0.5 / 1.25, 0.0), 1e-14));
    }

    #[test]
    fn ill_posed_feedback_detected() {
        let one = StateSpace::static_gain(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let minus = StateSpace::static_gain(DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert!(matches!(one.feedback(&minus, 1e8), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn zoh_first_order() {
        let g = StateSpace::first_order(1.0, 1.0).unwrap();
        let (ad, bd) = g.zoh(0.1);
        assert!((ad[(0, 0)] - (-0.1f64).exp()).abs() < 1e-14);
        assert!((bd[(0, 0)] - (1.0 - (-0.1f64).exp())).abs() < 1e-14);
    }
}
