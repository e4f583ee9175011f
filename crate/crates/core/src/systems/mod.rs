//! Primitive operators (LTI state space, static nonlinearities,
//! time-varying gains, scaled identities), their combinators, and
//! time-domain simulation from zero initial state.

mod expr;
pub mod json;
mod simulate;
mod statespace;

pub use expr::{GainProfile, OperatorExpr, StaticMap};
pub use simulate::{
    check_causality, simulate, simulate_with, step_response, CausalityReport, IoMap, LoopSolver,
};
pub(crate) use simulate::Stepper;
pub use statespace::{FrequencyEvaluator, StateSpace};
pub(crate) use statespace::stack_rows;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{shift_steps, Signal, TimeGrid};

    fn grid() -> TimeGrid {
        TimeGrid::new(0.01, 1000).unwrap()
    }

    #[test]
    fn identity_passes_input_through() {
        let u = Signal::scalar_fn(grid(), |t| (3.0 * t).sin());
        let y = simulate(&OperatorExpr::identity(1, 1.0).unwrap(), &u).unwrap();
        assert_eq!(y, u);
    }

    #[test]
    fn first_order_step_response() {
        let g = OperatorExpr::lti(StateSpace::first_order(1.0, 1.0).unwrap());
        let y = step_response(&g, grid()).unwrap();
        for (k, t) in grid().times().enumerate() {
            assert!((y.sample(k)[0] - (1.0 - (-t).exp())).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn sum_node_is_linear() {
        let g = OperatorExpr::lti(StateSpace::first_order(2.0, 0.5).unwrap());
        let d = OperatorExpr::tv_gain(1, GainProfile::SinSquared { offset: 1.0, amplitude: 1.0, omega: 1.0 }).unwrap();
        let sum = OperatorExpr::sum(vec![g.clone(), d.clone()]).unwrap();
        let u = Signal::scalar_fn(grid(), |t| (-t).exp() * (5.0 * t).cos());
        let lhs = simulate(&sum, &u).unwrap();
        let rhs = simulate(&g, &u).unwrap().add(&simulate(&d, &u).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn lti_time_invariance_on_grid() {
        let g = OperatorExpr::lti(
            StateSpace::first_order(1.0, 2.0).unwrap().parallel(&StateSpace::first_order(-0.5, 0.3).unwrap()).unwrap(),
        );
        let u = Signal::scalar_fn(grid(), |t| (2.0 * t).sin() + 0.2);
        for j in [1usize, 37, 400] {
            let a = simulate(&g, &shift_steps(&u, j)).unwrap();
            let b = shift_steps(&simulate(&g, &u).unwrap(), j);
            assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn tv_gain_is_passive_on_every_horizon() {
        let d = OperatorExpr::tv_gain(1, GainProfile::Affine { offset: 1.0, slope: 0.5 }).unwrap();
        let u = Signal::scalar_fn(grid(), |t| (7.0 * t).sin() - 0.3);
        let y = simulate(&d, &u).unwrap();
        assert!(u.cumulative_inner(&y).unwrap().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn unstable_system_overflows() {
        let g = OperatorExpr::lti(StateSpace::first_order(1.0, -50.0).unwrap());
        let u = Signal::scalar_fn(TimeGrid::new(0.1, 2000).unwrap(), |_| 1.0);
        match simulate(&g, &u) {
            Err(crate::Error::Overflow { index, .. }) => assert!(index > 0 && index < 2000),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn nonlinear_feedback_matches_closed_form() {
        // y = 2(u - 0.25 y)  =>  y = 2u / 1.5 for a static loop.
        let f = OperatorExpr::feedback(
            OperatorExpr::tv_gain(1, GainProfile::SinSquared { offset: 2.0, amplitude: 0.0, omega: 0.0 }).unwrap(),
            OperatorExpr::static_map(1, StaticMap::SectorCubic { a: 0.25, b: 0.0 }).unwrap(),
        )
        .unwrap();
        assert!(!f.is_lti());
        let u = Signal::scalar_fn(grid(), |t| t.cos());
        let y = simulate(&f, &u).unwrap();
        assert!(y.sub(&u.scale(2.0 / 1.5)).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn causality_checks() {
        struct Reverse;
        impl IoMap for Reverse {
            fn input_dim(&self) -> usize {
                1
            }
            fn output_dim(&self) -> usize {
                1
            }
            fn apply(&self, u: &Signal) -> crate::Result<Signal> {
                let mut v = u.channel(0);
                v.reverse();
                Signal::new(u.grid(), 1, v)
            }
        }
        let g = grid();
        let probes = vec![
            Signal::scalar_fn(g, |t| (2.0 * t).sin()),
            Signal::scalar_fn(g, |t| (-0.5 * t).exp()),
        ];
        let horizons = [0.5, 2.0, 7.3];
        let lti = OperatorExpr::lti(StateSpace::first_order(1.0, 1.0).unwrap());
        assert!(check_causality(&lti, &probes, &horizons, 1e-12).unwrap().causal);
        let tv = OperatorExpr::tv_gain(1, GainProfile::Affine { offset: 1.0, slope: 0.5 }).unwrap();
        assert!(check_causality(&tv, &probes, &horizons, 1e-12).unwrap().causal);
        assert!(!check_causality(&Reverse, &probes, &horizons, 1e-12).unwrap().causal);
        let empty = check_causality(&lti, &[], &horizons, 1e-12).unwrap();
        assert!(empty.causal && empty.no_probes);
    }

    #[test]
    fn zoh_convergence_under_refinement() {
        // Smooth input: halving dt shrinks the deviation from the fine-grid
        // reference roughly linearly (held-input interpretation).
        let g = OperatorExpr::lti(StateSpace::first_order(1.0, 1.0).unwrap());
        let run = |dt: f64| {
            let grid = TimeGrid::with_horizon(dt, 4.0).unwrap();
            let y = simulate(&g, &Signal::scalar_fn(grid, |t| t.sin())).unwrap();
            y.sample(grid.n_steps())[0]
        };
        // exact: y(4) for u = sin t through 1/(s+1)
        let t: f64 = 4.0;
        let exact = 0.5 * (t.sin() - t.cos() + (-t).exp());
        let e1 = (run(0.02) - exact).abs();
        let e2 = (run(0.01) - exact).abs();
        assert!(e2 < e1 && e2 < 0.01);
    }
}
