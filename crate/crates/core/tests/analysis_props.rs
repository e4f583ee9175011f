mod common;

use dissipcert::feedback::multiplier_transform;
use dissipcert::gain::{empirical_gain_lb, hinf_norm};
use dissipcert::linalg::sigma_max;
use dissipcert::passivity::{empirical_passivity_deficit, osp_index, pr_margin, FrequencyGrid, PassivityMethod};
use dissipcert::signals::probes::{family, ProbeSpec};
use dissipcert::signals::TimeGrid;
use dissipcert::systems::{GainProfile, OperatorExpr, StateSpace};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-8;

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    common::uniform(rng, n, n, 1.0).qr().q()
}

/// Independent oracle: `σ_max((jωI - A)⁻¹)`-based evaluation of `G(jω)`.
fn sigma_at(ss: &StateSpace, w: f64) -> f64 {
    let n = ss.n_states();
    let to_c = |m: &DMatrix<f64>| m.map(|v| nalgebra::Complex::new(v, 0.0));
    let mut jw = -to_c(ss.a());
    for i in 0..n {
        jw[(i, i)] += nalgebra::Complex::new(0.0, w);
    }
    let x = jw.lu().solve(&to_c(ss.b())).unwrap();
    let g = to_c(ss.c()) * x + to_c(ss.d());
    g.singular_values().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn empirical_gain_never_exceeds_hinf(seed in any::<u64>(), n in 1usize..5, m in 1usize..3, p in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ss = random_stable_checked(&mut rng, n, m, p);
        let dt = 0.02;
        let probes = family(TimeGrid::new(dt, 1500).unwrap(), m, &ProbeSpec { seed, ..ProbeSpec::default() });
        let lb = empirical_gain_lb(&OperatorExpr::lti(ss.clone()), &probes).unwrap();
        let hinf = hinf_norm(&ss, TOL).unwrap();
        // Held-input simulation against trapezoid norms: first-order mismatch.
        let quadrature = dt * sigma_max(ss.a()) * hinf.value;
        prop_assert!(lb.value <= hinf.value + TOL + quadrature, "{} > {}", lb.value, hinf.value);
    }

    #[test]
    fn hinf_matches_dense_grid(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ss = random_stable_checked(&mut rng, n, 2, 2);
        let hinf = hinf_norm(&ss, TOL).unwrap();
        let grid = common::dense_log_grid(1e-4, 1e4, 8000);
        let (k, best) = grid.iter().enumerate().map(|(i, &w)| (i, sigma_at(&ss, w))).fold((0, sigma_at(&ss, 0.0)), |a, b| if b.1 > a.1 { b } else { a });
        let (lo, hi) = (grid[k.saturating_sub(1)], grid[(k + 1).min(grid.len() - 1)]);
        let zoom = (0..=2000).map(|i| sigma_at(&ss, lo + (hi - lo) * i as f64 / 2000.0)).fold(best, f64::max);
        prop_assert!(zoom <= hinf.value + 10.0 * TOL);
        prop_assert!(hinf.value - zoom <= 1e-5 * (1.0 + hinf.value), "hinf {} grid {}", hinf.value, zoom);
    }

    #[test]
    fn orthogonal_multipliers_preserve_gain(seed in any::<u64>(), n in 1usize..5, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ss = random_stable_checked(&mut rng, n, m, m);
        let (u, v) = (random_orthogonal(&mut rng, m), random_orthogonal(&mut rng, m));
        let t = multiplier_transform(&ss, &u, &v).unwrap().to_state_space().unwrap();
        let (a, b) = (hinf_norm(&ss, TOL).unwrap().value, hinf_norm(&t, TOL).unwrap().value);
        prop_assert!((a - b).abs() <= 2.0 * TOL * (1.0 + a), "{a} vs {b}");
    }

    #[test]
    fn osp_bounds_the_gain(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ss, eps, _) = common::random_strict(&mut rng, n, m, 0.05, None);
        let g = hinf_norm(&ss, TOL).unwrap().value;
        prop_assert!(g <= 1.0 / eps + 1e-6, "gain {g} > 1/{eps}");
    }

    #[test]
    fn mass_osp_sign_follows_damping(m in 0.1f64..5.0, d in -3.0f64..3.0) {
        prop_assume!(d.abs() > 1e-3);
        let idx = osp_index(&StateSpace::mass(m, d).unwrap(), &FrequencyGrid::default()).unwrap();
        prop_assert_eq!(idx.value > 0.0, d > 0.0);
        prop_assert!((idx.value - d).abs() < 1e-9 * (1.0 + d.abs()));
    }

    #[test]
    fn supply_is_superadditive(seed in any::<u64>(), offset in 0.0f64..1.0, slope in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = OperatorExpr::lti(random_stable_checked(&mut rng, 2, 1, 1));
        let delta = OperatorExpr::tv_gain(1, GainProfile::Affine { offset, slope }).unwrap();
        let probes = family(TimeGrid::new(0.02, 500).unwrap(), 1, &ProbeSpec { seed, ..ProbeSpec::default() });
        let sum = OperatorExpr::sum(vec![g.clone(), delta.clone()]).unwrap();
        let s_sum = empirical_passivity_deficit(&sum, &probes, &[]).unwrap().min_supply.unwrap();
        let s_g = empirical_passivity_deficit(&g, &probes, &[]).unwrap().min_supply.unwrap();
        let s_d = empirical_passivity_deficit(&delta, &probes, &[]).unwrap().min_supply.unwrap();
        prop_assert!(s_sum >= s_g + s_d - 1e-10 * (1.0 + s_g.abs() + s_d.abs()));
    }
}

fn random_stable_checked(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> StateSpace {
    let ss = common::random_stable(rng, n, m, p);
    assert!(ss.is_hurwitz());
    ss
}

#[test]
fn pr_margin_examples() {
    let grid = FrequencyGrid::default();
    let lp = pr_margin(&StateSpace::first_order(1.0, 1.0).unwrap(), &grid).unwrap();
    assert!(lp.value.abs() < 1e-9 && lp.value >= 0.0 && lp.omega.is_none());
    let neg = pr_margin(&StateSpace::mass(1.0, -0.5).unwrap(), &grid).unwrap();
    assert!(neg.value < 0.0);
    assert_eq!(neg.omega, Some(0.0));
    let d = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
    let st = pr_margin(&StateSpace::static_gain(d).unwrap(), &grid).unwrap();
    assert!((st.value - 2.0).abs() < 1e-12);
}

#[test]
fn osp_examples() {
    let grid = FrequencyGrid::default();
    for (pole, expect) in [(2.0, 2.0), (1.0, 1.0)] {
        let v = osp_index(&StateSpace::first_order(1.0, pole).unwrap(), &grid).unwrap().value;
        assert!((v - expect).abs() < 1e-9, "{v}");
    }
    let one = StateSpace::static_gain(DMatrix::identity(1, 1)).unwrap();
    assert!((osp_index(&one, &grid).unwrap().value - 1.0).abs() < 1e-12);
}

#[test]
fn empirical_deficit_examples() {
    let g = TimeGrid::new(0.01, 2000).unwrap();
    let probes = family(g, 1, &ProbeSpec::default());
    let tv = OperatorExpr::tv_gain(1, GainProfile::SinSquared { offset: 1.0, amplitude: 1.0, omega: 1.0 }).unwrap();
    let r = empirical_passivity_deficit(&tv, &probes, &[]).unwrap();
    assert_eq!(r.method, PassivityMethod::EmpiricalProbes);
    assert!(r.min_supply.unwrap() >= 0.0);

    let unstable = OperatorExpr::lti(StateSpace::first_order(1.0, -0.1).unwrap());
    let r = empirical_passivity_deficit(&unstable, &probes, &[]).unwrap();
    assert!(r.min_supply.unwrap() < 0.0 && r.witness.probe.is_some());

    let eps = 0.3;
    let r = empirical_passivity_deficit(&OperatorExpr::identity(1, eps).unwrap(), &probes, &[]).unwrap();
    assert!((r.delta - eps / 2.0).abs() < 1e-9, "delta {}", r.delta);
    assert!((r.epsilon - 1.0 / (2.0 * eps)).abs() < 1e-9, "epsilon {}", r.epsilon);
}

#[test]
fn random_orthogonal_is_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_orthogonal(&mut rng, 3);
    assert!(dissipcert::linalg::orthogonality_defect(&q) < 1e-12);
}

#[test]
fn hinf_terminates_on_a_stalling_hamiltonian() {
    #[rustfmt::skip]
    let a = [
        -1.0984771494360746, -0.4749110868140023, 0.38969934079167423, 0.6006483578584549, -0.26812007234510604, -0.6478619286315244, 0.8136958948116568,
        -0.7035218415706996, -2.2779292241962175, 0.8069862885289893, -0.38025191089668287, 0.3315578750728876, 0.9488497295280212, -0.2827865836418897,
        0.34582438424224193, -0.346261101332352, -2.179920967918827, 0.31608417308108416, -0.7949100761401708, -0.6028691185456325, -0.7940840146294073,
        -0.6670965157182094, -0.3910590156488638, 0.37467267168011187, -1.8362810467532764, -0.09498462226310833, 0.7549019459589763, -0.3430494425038382,
        -0.3007262462400897, -0.03570964590209158, 0.08801098903643245, 0.6182895917118776, -0.8157341246218244, -0.9206289427239311, 0.8493335815538297,
        0.4722022903754284, 0.6044074395498678, 0.40972856859342865, 0.9493487428402179, 0.4745462412146697, -0.9833386530547861, 0.666057753666037,
        0.4946868693470332, 0.46552712261652873, -0.672174266991445, -0.39267933336059047, 0.41802505110681754, -0.742725936096988, -0.9642886819742578,
    ];
    #[rustfmt::skip]
    let b = [
        0.09444118700698478, -0.6775262702616414, -0.4631060505232023, -0.8600253676996155, 0.3477050830527384, 0.3913527729131534, 0.056555516576043185,
        -0.42000599908700664, -0.2546851768692684, 0.046228804282952396, -0.17897090373682545, -0.9882786299829989, 0.07887208652163391, -0.9172406822225327,
    ];
    let c = [0.776148821147816, -0.16475026455046615, 0.7699948810417903, 0.8764525888086689, -0.49651182764805357, -0.31699248993371887, 0.4534115839360995];
    let ss = StateSpace::new(
        DMatrix::from_column_slice(7, 7, &a),
        DMatrix::from_column_slice(7, 2, &b),
        DMatrix::from_column_slice(1, 7, &c),
        DMatrix::from_column_slice(1, 2, &[0.1487753755810286, 0.4875791637508353]),
    )
    .unwrap();
    let g = hinf_norm(&ss, 1e-7).unwrap();
    let dc = sigma_max(&ss.dc_gain().unwrap());
    assert!(g.value >= dc - 1e-9 && g.value <= dc + 1e-6, "{} vs dc {dc}", g.value);
}
