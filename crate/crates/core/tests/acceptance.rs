//! Acceptance criteria. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use dissipcert::adversary::{
    falsify_with, mass_spring_case, revalidate, EnvFamily, FalsifyOptions, LoopMode, Verdict,
};
use dissipcert::config::Settings;
use dissipcert::feedback::{loop_gain, transformed_r_ey, Channel, ClosedLoop, LoopOptions};
use dissipcert::gain::hinf_norm;
use dissipcert::passivity::{osp_index, pr_margin, strict_passivity_index, FrequencyGrid};
use dissipcert::signals::{inner_product, l2_norm, Signal, TimeGrid};
use dissipcert::sprocedure::{
    check_sprocedure, default_generators, default_shifts, make_form, passivity_gamma, sample_subspace_with, FormKind,
    SubspaceTag,
};
use dissipcert::systems::{OperatorExpr, StateSpace};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

const HINF_TOL: f64 = 1e-9;

fn lti(ss: &StateSpace) -> OperatorExpr {
    OperatorExpr::lti(ss.clone())
}

fn passive_environment(rng: &mut ChaCha8Rng, m: usize) -> StateSpace {
    let grid = FrequencyGrid::default();
    loop {
        let n = rng.gen_range(1..=3);
        let fd = rng.gen_range(0.0..0.5);
        let ss = common::random_passive(rng, n, m, fd);
        if pr_margin(&ss, &grid).unwrap().value >= 0.0 {
            return ss;
        }
    }
}

fn example_reproduction() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut mismatches, mut trace_det_mismatches) = (0, 0, 0);
    let mut sample = None;
    for i in 0..41 {
        let d = -1.0 + 2.0 * i as f64 / 40.0;
        for j in 0..41 {
            let s0 = 2.0 * j as f64 / 40.0;
            let c = mass_spring_case(1.0, d, s0, 1.0).unwrap();
            if (d + s0).abs() <= 1e-6 {
                continue;
            }
            checked += 1;
            if c.stable != (d + s0 > 0.0) {
                mismatches += 1;
                sample.get_or_insert((d, s0));
            }
            // Hurwitz test for a 2×2 matrix: negative trace and positive determinant.
            if c.stable != (d + s0 > 0.0 && d * s0 + 1.0 > 1e-12) {
                trace_det_mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let example = sample.map_or(String::new(), |(d, s0)| format!(" (first at d = {d}, s0 = {s0})"));
    (
        mismatches == 0 && secs < 5.0,
        format!(
            "{mismatches} of {checked} non-boundary points disagree with d/m + s0 > 0{example}; \
             trace-and-determinant test disagrees at {trace_det_mismatches}; {secs:.2} s"
        ),
    )
}

fn osp_robust_stability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = FalsifyOptions::default();
    let budget = Settings::default().falsify_budget;
    let family = EnvFamily::first_order();
    let fgrid = FrequencyGrid::default();
    let (mut band, mut wrong, mut false_witnesses, mut destabilized) = (0, 0, 0, 0);
    for _ in 0..200 {
        let (m, d) = (rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0));
        let ss = StateSpace::mass(m, d).unwrap();
        let osp = osp_index(&ss, &fgrid).unwrap().value;
        let r = falsify_with(&lti(&ss), &family, budget, LoopMode::E2Zero, &opts).unwrap();
        let hit = r.verdict == Verdict::Destabilized;
        destabilized += hit as usize;
        if hit && !revalidate(&lti(&ss), &family, &r, &opts).unwrap() {
            false_witnesses += 1;
        }
        if d.abs() <= 0.02 {
            band += 1;
            continue;
        }
        if hit != (osp <= 0.0) {
            wrong += 1;
        }
    }
    (
        wrong == 0 && false_witnesses == 0,
        format!("{wrong} misclassified, {false_witnesses} false witnesses, {destabilized} destabilized, {band} in the band |d| <= 0.02 (budget {budget})"),
    )
}

fn osp_forward_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for i in 0..50 {
        let m = 1 + i % 2;
        let n = rng.gen_range(1..=4);
        let (ss1, eps, _) = common::random_strict(&mut rng, n, m, 0.1, None);
        let ss2 = passive_environment(&mut rng, m);
        let cl = ClosedLoop::new(lti(&ss1), lti(&ss2), true).unwrap();
        let g = loop_gain(&cl, Channel::E1ToY1, HINF_TOL).unwrap().value;
        let slack = g - 1.0 / eps;
        worst = worst.max(slack);
        violations += (slack > 1e-3) as usize;
    }
    (violations == 0, format!("{violations} of 50 exceed 1/eps + 1e-3; max gain - 1/eps = {worst:.3e}"))
}

fn strict_passivity_forward_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for i in 0..50 {
        let m = 1 + i % 2;
        let n = rng.gen_range(1..=4);
        let (ss1, eps, _) = common::random_strict(&mut rng, n, m, 0.1, Some(0.1));
        let ss2 = passive_environment(&mut rng, m);
        let cl = ClosedLoop::new(lti(&ss1), lti(&ss2), false).unwrap();
        let g = loop_gain(&cl, Channel::Full, HINF_TOL).unwrap().value;
        let slack = g - (2.0 + 1.0 / eps);
        worst = worst.max(slack);
        violations += (slack > 1e-3) as usize;
    }
    (violations == 0, format!("{violations} of 50 exceed 2 + 1/eps + 1e-3; max gain - (2 + 1/eps) = {worst:.3e}"))
}

fn small_gain_sweep() -> Outcome {
    let opts = FalsifyOptions::default();
    let budget = Settings::default().falsify_budget;
    let family = EnvFamily::gain_ball(1.0);
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [0.5, 0.9, 0.99, 1.01, 1.5] {
        let sigma1 = lti(&StateSpace::first_order(beta, 1.0).unwrap());
        let r = falsify_with(&sigma1, &family, budget, LoopMode::E2Free, &opts).unwrap();
        let hit = r.verdict == Verdict::Destabilized;
        let expect_marginal = (beta - 1.0f64).abs() <= 0.01 + 1e-12;
        let valid = revalidate(&sigma1, &family, &r, &opts).unwrap();
        ok &= hit == (beta > 1.0) && r.marginal == expect_marginal && valid;
        parts.push(format!("beta {beta}: {}{}", if hit { "destabilized" } else { "survived" }, if r.marginal { " (marginal)" } else { "" }));
    }
    (ok, parts.join(", "))
}

/// `σ_max(C (jωI - A)⁻¹ B + D)` evaluated directly.
fn sigma_at(ss: &StateSpace, w: f64) -> f64 {
    let c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
    let mut m = -c(ss.a());
    for i in 0..ss.n_states() {
        m[(i, i)] += Complex::new(0.0, w);
    }
    let x = m.lu().solve(&c(ss.b())).expect("jw is not a pole");
    (c(ss.c()) * x + c(ss.d())).singular_values().max()
}

/// Dense logarithmic grid with three rounds of local zoom around the
/// largest local maxima.
fn grid_supremum(ss: &StateSpace) -> f64 {
    let omegas = common::dense_log_grid(1e-4, 1e4, 4000);
    let values: Vec<f64> = omegas.iter().map(|&w| sigma_at(ss, w)).collect();
    let mut best = sigma_at(ss, 0.0).max(values.iter().copied().fold(0.0, f64::max));
    let mut peaks: Vec<usize> = (1..omegas.len() - 1).filter(|&i| values[i] >= values[i - 1] && values[i] >= values[i + 1]).collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    for &i in peaks.iter().take(3) {
        let (mut lo, mut hi) = (omegas[i - 1], omegas[i + 1]);
        for _ in 0..4 {
            let pts: Vec<(f64, f64)> = (0..=200).map(|k| lo + (hi - lo) * k as f64 / 200.0).map(|w| (w, sigma_at(ss, w))).collect();
            let (k, &(w, v)) = pts.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).unwrap();
            best = best.max(v);
            lo = pts[k.saturating_sub(1)].0;
            hi = pts[(k + 1).min(200)].0;
            let _ = w;
        }
    }
    best
}

fn hinf_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let start = Instant::now();
    let (mut worst, mut failures) = (0.0f64, 0);
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let (m, p) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let ss = common::random_stable(&mut rng, n, m, p);
        let h = hinf_norm(&ss, Settings::default().hinf_tol).unwrap().value;
        let g = grid_supremum(&ss);
        let err = (h - g).abs() / (1.0 + h);
        worst = worst.max(err);
        failures += (err > 1e-5) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    (failures == 0 && secs < 30.0, format!("{failures} of 100 outside 1e-5(1 + value); max relative gap {worst:.2e}; {secs:.2} s including the grid oracle"))
}

fn loop_transform_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = LoopOptions::default();
    let (mut worst, mut failures) = (0.0f64, 0);
    for i in 0..30 {
        let m = 1 + i % 2;
        let (ss1, ss2) = if i % 3 == 0 {
            let scale = |ss: StateSpace, target: f64| {
                let g = hinf_norm(&ss, HINF_TOL).unwrap().value;
                ss.scaled(target / g)
            };
            let a = rng.gen_range(0.2..0.9);
            let n1 = rng.gen_range(1..=4);
            let s1 = common::random_stable(&mut rng, n1, m, m);
            let n2 = rng.gen_range(1..=3);
            let s2 = common::random_stable(&mut rng, n2, m, m);
            (scale(s1, a), scale(s2, 0.95 / a))
        } else {
            let n1 = rng.gen_range(1..=4);
            (common::random_strict(&mut rng, n1, m, 0.01, None).0, passive_environment(&mut rng, m))
        };
        let before = loop_gain(&ClosedLoop::new(lti(&ss1), lti(&ss2), false).unwrap(), Channel::Full, HINF_TOL).unwrap().value;
        for eps in [0.01, 0.1] {
            let after = hinf_norm(&transformed_r_ey(&ss1, &ss2, eps, &opts).unwrap(), HINF_TOL).unwrap().value;
            let rel = (before - after).abs() / before;
            worst = worst.max(rel);
            failures += (rel > 1e-4) as usize;
        }
    }
    (failures == 0, format!("{failures} of 60 comparisons outside 1e-4 relative; max relative difference {worst:.2e}"))
}

fn sprocedure_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let settings = Settings::default();
    let tgrid = TimeGrid::new(0.05, 400).unwrap();
    let fgrid = FrequencyGrid::default();
    let shifts = default_shifts(tgrid, settings.ensemble_shifts);
    let ensemble = |g: &StateSpace, seed: u64| {
        let gens = default_generators(tgrid, g.n_inputs(), SubspaceTag::Passivity, settings.ensemble_generators, seed);
        sample_subspace_with(g, &gens, SubspaceTag::Passivity, &shifts).unwrap()
    };
    let (mut feasible, mut worst_combined, mut members) = (0, f64::NEG_INFINITY, 0);
    let mut gammas = Vec::new();
    let mut plants = Vec::new();
    while plants.len() < 20 {
        let m = 1 + plants.len() % 2;
        let n = rng.gen_range(1..=3);
        let (g, _, _) = common::random_strict(&mut rng, n, m, 0.1, Some(0.1));
        let eta = strict_passivity_index(&g, &fgrid).unwrap().value;
        if eta > 0.1 {
            plants.push((g, eta));
        }
    }
    for (i, (g, eta)) in plants.iter().enumerate() {
        let (gamma, _) = passivity_gamma(*eta).unwrap();
        gammas.push(gamma);
        let ens = ensemble(g, i as u64);
        members = members.max(ens.members.len());
        let s0 = make_form(&ens.layout, FormKind::Gain { gamma }).unwrap();
        let s1 = make_form(&ens.layout, FormKind::Passivity).unwrap();
        let r = check_sprocedure(&ens, &s0, &s1, None).unwrap();
        if let (Some(_), Some(mu)) = (r.mu_interval, r.mu_hat) {
            let combined = ens
                .members
                .iter()
                .map(|f| s0.eval(f).unwrap() + mu * s1.eval(f).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            worst_combined = worst_combined.max(combined);
            feasible += (combined <= 1e-7) as usize;
        }
    }

    let mut witnesses = 0;
    for (i, (g, _)) in plants.iter().enumerate() {
        let bad = if i % 2 == 0 {
            g.scaled(-1.0)
        } else {
            StateSpace::mass(rng.gen_range(0.5..2.0), rng.gen_range(-1.0..-0.1)).unwrap()
        };
        let ens = ensemble(&bad, 100 + i as u64);
        let s0 = make_form(&ens.layout, FormKind::Gain { gamma: gammas[i] }).unwrap();
        let s1 = make_form(&ens.layout, FormKind::Passivity).unwrap();
        let r = check_sprocedure(&ens, &s0, &s1, None).unwrap();
        if let Some(v) = r.violation {
            let f = &ens.members[v.member];
            let (a, b) = (s0.eval(f).unwrap(), s1.eval(f).unwrap());
            witnesses += (!r.conditional_negativity && a > 0.0 && b >= 0.0) as usize;
        }
    }
    (
        feasible == 20 && witnesses == 20,
        format!(
            "{feasible}/20 strictly passive plants re-verify (max a + mu b = {worst_combined:.3e}, {members} members); \
             {witnesses}/20 non-passive plants give an (a > 0, b >= 0) witness"
        ),
    )
}

fn signal_numerics() -> Outcome {
    let errors = |f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, exact: f64| -> Vec<f64> {
        [10usize, 20, 40, 80, 160]
            .iter()
            .map(|&n| {
                let grid = TimeGrid::new(1.0 / n as f64, n).unwrap();
                (inner_product(&Signal::scalar_fn(grid, f), &Signal::scalar_fn(grid, g)).unwrap() - exact).abs()
            })
            .collect()
    };
    let cross = errors(&f64::sin, &f64::cos, 1f64.sin().powi(2) / 2.0);
    let square = errors(&f64::sin, &f64::sin, 0.5 - 2f64.sin() / 4.0);
    let order = cross
        .windows(2)
        .chain(square.windows(2))
        .map(|w| (w[0] / w[1]).log2())
        .fold(f64::INFINITY, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cs_violations = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..50);
        let c = rng.gen_range(1..4);
        let grid = TimeGrid::new(rng.gen_range(1e-3..0.5), n).unwrap();
        let len = (n + 1) * c;
        let u = Signal::new(grid, c, (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let v = Signal::new(grid, c, (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        if inner_product(&u, &v).unwrap().abs() > l2_norm(&u) * l2_norm(&v) * (1.0 + 1e-12) {
            cs_violations += 1;
        }
    }
    (order >= 1.9 && cs_violations == 0, format!("minimum observed quadrature order {order:.3}; {cs_violations} Cauchy-Schwarz violations in 10^4 pairs"))
}

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 9] = [
        (1, "example reproduction", example_reproduction),
        (2, "OSP and robust stability on the mass family", osp_robust_stability),
        (3, "OSP forward gain bound", osp_forward_bound),
        (4, "strict passivity forward gain bound", strict_passivity_forward_bound),
        (5, "small-gain converse sweep", small_gain_sweep),
        (6, "H-infinity oracle equivalence", hinf_oracle),
        (7, "loop-transformation equivalence", loop_transform_equivalence),
        (8, "S-procedure consistency", sprocedure_consistency),
        (9, "signal-layer numerics", signal_numerics),
    ];
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, title, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id} {} {title}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
