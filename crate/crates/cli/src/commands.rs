use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dissipcert::adversary::{falsify_with, mass_spring_abscissa, mass_spring_sweep, parse_campaign, revalidate, FalsifyOptions, Verdict};
use dissipcert::config::Settings;
use dissipcert::feedback::{
    close_loop_lti, closed_loop_poles, loop_gain_empirical, loop_gain_with, parse_loop, simulate_loop_with,
    transformed_r_ey, multiplier_transform, Channel, ClosedLoop, LoopOptions,
};
use dissipcert::gain::{empirical_gain_lb, hinf_norm, log_grid, sigma_sweep, GainCertificate};
use dissipcert::passivity::{empirical_passivity_deficit, lti_passivity_report, osp_index, pr_margin, strict_passivity_index, FrequencyGrid};
use dissipcert::signals::probes::{family, ProbeSpec};
use dissipcert::signals::{read_csv, Signal, TimeGrid};
use dissipcert::sprocedure::{
    check_sprocedure, default_generators, default_shifts, make_form, passivity_gamma, sample_subspace_with, FormKind, SubspaceTag,
};
use dissipcert::systems::json::parse_system;
use dissipcert::systems::{check_causality, OperatorExpr, StateSpace};
use dissipcert::Error;
use nalgebra::{Complex, DMatrix};
use serde_json::{json, Map, Value};

use crate::plot::{line_chart, phase_chart, Series};
use crate::{Cli, Command, Common, TimeArgs};

pub enum Outcome {
    Ok,
    Unstable,
}

struct Ctx {
    settings: Settings,
    out: PathBuf,
    plots: bool,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut settings = Settings::from_env()?;
        for o in &common.overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects NAME=VALUE, got `{o}`"))?;
            settings.set(k.trim(), v)?;
        }
        if let Some(seed) = common.seed {
            settings.seed = seed;
        }
        settings.validate()?;
        Ok(Self { settings, out: common.out.clone(), plots: !common.no_plots })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("{}: cannot create directory", self.out.display()))?;
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("{}: cannot write", path.display()))
    }

    fn plot(&self, name: &str, svg: impl FnOnce() -> String) -> Result<()> {
        if self.plots {
            self.write(name, &svg())?;
        }
        Ok(())
    }

    fn header(&self, command: &str) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("schema".into(), json!(1));
        m.insert("command".into(), json!(command));
        m.insert("settings".into(), serde_json::to_value(&self.settings).expect("settings serialise"));
        m
    }

    fn finish(&self, name: &str, report: Map<String, Value>) -> Result<()> {
        let text = serde_json::to_string_pretty(&Value::Object(report))? + "\n";
        self.write(name, &text)?;
        print!("{text}");
        Ok(())
    }
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("{}: cannot read file", path.display()))
}

fn qualify(path: &Path) -> impl Fn(Error) -> anyhow::Error + '_ {
    move |e| anyhow!("{}: {e}", path.display())
}

fn complex_list(v: &[Complex<f64>]) -> Value {
    json!(v.iter().map(|p| [p.re, p.im]).collect::<Vec<_>>())
}

fn unbounded(method: &str, abscissa: f64) -> Value {
    json!({ "value": null, "unbounded": true, "method": method, "spectral_abscissa": abscissa })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let ctx = Ctx::new(&cli.common)?;
    match &cli.command {
        Command::Analyze { system, time } => analyze(&ctx, system, *time),
        Command::Interconnect { spec, e1, e2, time } => interconnect(&ctx, spec, e1.as_deref(), e2.as_deref(), *time),
        Command::Falsify { campaign, budget } => falsify_cmd(&ctx, campaign, *budget),
        Command::Sproc { system, tag, gamma, alpha, generators, time } => sproc(&ctx, system, tag, *gamma, *alpha, *generators, *time),
        Command::Example { m, k, grid, d_range, s0_range } => example(&ctx, *m, *k, grid, d_range, s0_range),
        Command::Transform { spec, eps, multiplier } => transform(&ctx, spec, eps, multiplier.as_deref()),
    }
}

fn time_grid(t: TimeArgs) -> Result<TimeGrid> {
    Ok(TimeGrid::new(t.dt, t.steps)?)
}

fn probe_spec(s: &Settings) -> ProbeSpec {
    ProbeSpec { seed: s.seed, ..ProbeSpec::default() }
}

fn analyze(ctx: &Ctx, path: &Path, time: TimeArgs) -> Result<Outcome> {
    let op = parse_system(&read_input(path)?).map_err(qualify(path))?;
    let s = &ctx.settings;
    let mut rep = ctx.header("analyze");
    rep.insert("input".into(), json!(path.display().to_string()));
    rep.insert("inputs".into(), json!(op.input_dim()));
    rep.insert("outputs".into(), json!(op.output_dim()));
    rep.insert("lti".into(), json!(op.is_lti()));
    let square = op.input_dim() == op.output_dim();
    let mut unstable = false;

    if let Some(ss) = op.to_state_space() {
        let abscissa = if ss.n_states() == 0 { None } else { Some(ss.spectral_abscissa()) };
        let stable = abscissa.map_or(true, |a| a < -s.stability_margin);
        unstable = !stable;
        rep.insert("states".into(), json!(ss.n_states()));
        rep.insert("poles".into(), complex_list(&ss.poles()));
        rep.insert("spectral_abscissa".into(), json!(abscissa));
        rep.insert("stable".into(), json!(stable));
        let gain = match hinf_norm(&ss, s.hinf_tol) {
            Ok(c) => serde_json::to_value(c)?,
            Err(Error::Unbounded { abscissa }) => unbounded("hamiltonian_bisection", abscissa),
            Err(e) => return Err(qualify(path)(e)),
        };
        rep.insert("gain".into(), gain);
        if square {
            let grid = FrequencyGrid::from_settings(s);
            rep.insert("pr_margin".into(), serde_json::to_value(pr_margin(&ss, &grid)?)?);
            rep.insert("osp_index".into(), serde_json::to_value(osp_index(&ss, &grid)?)?);
            rep.insert("strict_index".into(), serde_json::to_value(strict_passivity_index(&ss, &grid)?)?);
            rep.insert("passivity".into(), lti_passivity_report(&ss, &grid)?.to_json());
        }
        ctx.plot("gain.svg", || {
            let omegas = log_grid(s.freq_min, s.freq_max, 400);
            let sig = sigma_sweep(&ss, &omegas);
            let series = Series { name: "sigma_max G(jw)".into(), points: omegas.into_iter().zip(sig).collect() };
            line_chart("Gain versus frequency", "omega [rad/s]", "sigma_max", &[series], true, true)
        })?;
    } else {
        let grid = time_grid(time)?;
        let probes = family(grid, op.input_dim(), &probe_spec(s));
        rep.insert("horizon".into(), json!(grid.horizon()));
        match empirical_gain_lb(&op, &probes) {
            Ok(c) => {
                rep.insert("gain".into(), serde_json::to_value(c)?);
            }
            Err(Error::Overflow { index, time }) => {
                unstable = true;
                rep.insert("gain".into(), json!({ "value": null, "unbounded": true, "method": "empirical_lower_bound", "overflow_step": index, "overflow_time": time }));
            }
            Err(e) => return Err(qualify(path)(e)),
        }
        if square && !unstable {
            rep.insert("passivity".into(), empirical_passivity_deficit(&op, &probes, &[])?.to_json());
        }
        if !unstable {
            let horizons: Vec<f64> = (1..4).map(|i| grid.horizon() * i as f64 / 4.0).collect();
            let causality = check_causality(&op, &probes[..probes.len().min(4)], &horizons, 1e-9)?;
            rep.insert("causality".into(), serde_json::to_value(causality)?);
        }
    }
    rep.insert("verdict".into(), json!(if unstable { "unbounded" } else { "stable" }));
    ctx.finish("analyze.json", rep)?;
    Ok(if unstable { Outcome::Unstable } else { Outcome::Ok })
}

fn load_signal(path: Option<&Path>, channels: usize, grid: TimeGrid, default: impl Fn(f64) -> f64) -> Result<Signal> {
    match path {
        Some(p) => {
            let sig = read_csv(p).map_err(qualify(p))?;
            if sig.channels() != channels {
                bail!("{}: expected {channels} channels, found {}", p.display(), sig.channels());
            }
            Ok(sig)
        }
        None => Ok(Signal::from_fn(grid, channels, |t, o| o.fill(default(t)))),
    }
}

fn interconnect(ctx: &Ctx, path: &Path, e1: Option<&Path>, e2: Option<&Path>, time: TimeArgs) -> Result<Outcome> {
    let cl = parse_loop(&read_input(path)?).map_err(qualify(path))?;
    let s = &ctx.settings;
    let (m1, m2) = cl.dims();
    let grid = time_grid(time)?;
    let e1 = load_signal(e1, m1, grid, |t| if t < 1.0 { 1.0 } else { 0.0 })?;
    let e2 = load_signal(e2, m2, e1.grid(), |_| 0.0)?;
    let opts = LoopOptions::from_settings(s);
    let mut rep = ctx.header("interconnect");
    rep.insert("input".into(), json!(path.display().to_string()));
    rep.insert("loop".into(), cl.to_json());
    let mut unstable = false;

    match simulate_loop_with(&cl, &e1, &e2, &opts) {
        Ok(tr) => {
            let (r1, r2) = tr.equation_residuals()?;
            ctx.write("trajectory.csv", &tr.to_csv_string())?;
            rep.insert(
                "trajectory".into(),
                json!({ "file": "trajectory.csv", "residual": tr.residual, "equation_residuals": [r1, r2], "energy_ratio": tr.energy_ratio() }),
            );
            ctx.plot("trajectory.svg", || {
                let times: Vec<f64> = tr.y1.grid().times().collect();
                let series = [("y1[0]", &tr.y1), ("u1[0]", &tr.u1), ("e1[0]", &tr.e1)]
                    .iter()
                    .map(|(name, sig)| Series { name: name.to_string(), points: times.iter().copied().zip(sig.channel(0)).collect() })
                    .collect::<Vec<_>>();
                line_chart("Loop trajectory", "t", "value", &series, false, false)
            })?;
        }
        Err(Error::Overflow { index, time }) => {
            unstable = true;
            rep.insert("trajectory".into(), json!({ "overflow_step": index, "overflow_time": time }));
        }
        Err(e) => return Err(qualify(path)(e)),
    }

    let channel = if cl.e2_clamped() { Channel::E1ToY1 } else { Channel::Full };
    rep.insert("channel".into(), serde_json::to_value(channel)?);
    let gain = if let Some((ss1, ss2)) = cl.lti_pair() {
        rep.insert("closed_loop_poles".into(), complex_list(&closed_loop_poles(&ss1, &ss2, opts.cond_limit).map_err(qualify(path))?));
        loop_gain_with(&cl, channel, s.hinf_tol, &opts)
    } else {
        let probes = family(e1.grid(), if cl.e2_clamped() { m1 } else { m1 + m2 }, &probe_spec(s));
        loop_gain_empirical(&cl, channel, &probes, &opts)
    };
    let gain = match gain {
        Ok(c) => serde_json::to_value(c)?,
        Err(Error::Unbounded { abscissa }) => {
            unstable = true;
            unbounded("hamiltonian_bisection", abscissa)
        }
        Err(Error::Overflow { index, .. }) => {
            unstable = true;
            json!({ "value": null, "unbounded": true, "method": "empirical_lower_bound", "overflow_step": index })
        }
        Err(e) => return Err(qualify(path)(e)),
    };
    rep.insert("gain".into(), gain);
    rep.insert("verdict".into(), json!(if unstable { "unstable" } else { "stable" }));
    ctx.finish("interconnect.json", rep)?;
    Ok(if unstable { Outcome::Unstable } else { Outcome::Ok })
}

fn falsify_cmd(ctx: &Ctx, path: &Path, budget: Option<usize>) -> Result<Outcome> {
    let mut campaign = parse_campaign(&read_input(path)?).map_err(qualify(path))?;
    if let Some(b) = budget {
        campaign.budget = b;
    }
    let mut opts = FalsifyOptions::from_settings(&ctx.settings);
    campaign.tolerances.apply(&mut opts);
    let result = falsify_with(&campaign.sigma1, &campaign.family, campaign.budget, campaign.mode, &opts).map_err(qualify(path))?;
    let valid = revalidate(&campaign.sigma1, &campaign.family, &result, &opts).map_err(qualify(path))?;

    let mut rep = ctx.header("falsify");
    rep.insert("input".into(), json!(path.display().to_string()));
    rep.insert("family".into(), serde_json::to_value(&campaign.family)?);
    rep.insert(
        "tolerances".into(),
        json!({ "witness_margin": opts.witness_margin, "blowup_ratio": opts.blowup_ratio, "cert_tol": opts.cert_tol, "marginal_band": opts.marginal_band }),
    );
    rep.insert("result".into(), result.to_json());
    rep.insert("revalidated".into(), json!(valid));
    let destabilized = result.verdict == Verdict::Destabilized;
    rep.insert("verdict".into(), json!(if destabilized { "unstable" } else { "survived" }));
    ctx.plot("falsify_trace.svg", || {
        let pts = result.trace.iter().map(|t| (t.evaluation as f64, t.score)).collect();
        line_chart("Best score so far", "evaluation", "score", &[Series { name: "best".into(), points: pts }], false, false)
    })?;
    ctx.finish("falsify.json", rep)?;
    Ok(if destabilized { Outcome::Unstable } else { Outcome::Ok })
}

#[allow(clippy::too_many_arguments)]
fn sproc(ctx: &Ctx, path: &Path, tag: &str, gamma: Option<f64>, alpha: f64, generators: Option<usize>, time: TimeArgs) -> Result<Outcome> {
    let op = parse_system(&read_input(path)?).map_err(qualify(path))?;
    let ss = op.to_state_space().ok_or_else(|| anyhow!("{}: sproc needs an LTI system", path.display()))?;
    if !ss.is_square() {
        bail!("{}: sproc needs a square system", path.display());
    }
    let s = &ctx.settings;
    let tag = match tag {
        "passivity" => SubspaceTag::Passivity,
        "e2-zero" => SubspaceTag::E2Zero,
        "small-gain" => SubspaceTag::SmallGain,
        other => bail!("unknown tag `{other}` (expected passivity, e2-zero or small-gain)"),
    };
    let eta = strict_passivity_index(&ss, &FrequencyGrid::from_settings(s))?.value;
    let gamma = match (gamma, tag) {
        (Some(g), _) => g,
        (None, SubspaceTag::SmallGain) => bail!("--gamma is required with the small-gain tag"),
        (None, _) => passivity_gamma(eta).map(|(g, _)| g).ok_or_else(|| anyhow!("--gamma is required: joint index {eta:.3e} is not positive"))?,
    };
    let (k0, k1) = match tag {
        SubspaceTag::Passivity => (FormKind::Gain { gamma }, FormKind::Passivity),
        SubspaceTag::E2Zero => (FormKind::E2ZeroGain { gamma }, FormKind::E2ZeroPassivity),
        SubspaceTag::SmallGain => (FormKind::Gain { gamma }, FormKind::SmallGain { alpha }),
    };
    let grid = time_grid(time)?;
    let count = generators.unwrap_or(s.ensemble_generators);
    let gens = default_generators(grid, ss.n_inputs(), tag, count, s.seed);
    let ens = sample_subspace_with(&ss, &gens, tag, &default_shifts(grid, s.ensemble_shifts)).map_err(qualify(path))?;
    let sigma0 = make_form(&ens.layout, k0)?;
    let sigma1 = make_form(&ens.layout, k1)?;
    let report = check_sprocedure(&ens, &sigma0, &sigma1, None)?;

    let mut rep = ctx.header("sproc");
    rep.insert("input".into(), json!(path.display().to_string()));
    rep.insert("joint_index".into(), json!(eta));
    rep.insert("gamma".into(), json!(gamma));
    rep.insert("report".into(), report.to_json());
    ctx.plot("sproc_pairs.svg", || {
        let pts: Vec<(f64, f64, bool)> = report.pairs.iter().map(|p| (p.b, p.a, p.a <= report.tol)).collect();
        phase_chart("Constraint value b versus objective a", "b = sigma1", "a = sigma0", &pts, &[])
    })?;
    ctx.finish("sproc.json", rep)?;
    Ok(Outcome::Ok)
}

fn parse_pair(text: &str, sep: char, what: &str) -> Result<(f64, f64)> {
    let (a, b) = text.split_once(sep).ok_or_else(|| anyhow!("{what}: expected two values separated by `{sep}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| anyhow!("{what}: cannot parse `{v}`"));
    Ok((parse(a)?, parse(b)?))
}

fn example(ctx: &Ctx, m: f64, k: f64, grid: &str, d_range: &str, s0_range: &str) -> Result<Outcome> {
    let (nd, ns) = parse_pair(grid, 'x', "--grid")?;
    let (nd, ns) = (nd as usize, ns as usize);
    if nd < 2 || ns < 2 {
        bail!("--grid: need at least 2 points per axis");
    }
    let (d_lo, d_hi) = parse_pair(d_range, ',', "--d-range")?;
    let (s_lo, s_hi) = parse_pair(s0_range, ',', "--s0-range")?;
    if !(d_lo < d_hi && s_lo < s_hi && s_lo >= 0.0) {
        bail!("ranges must be increasing and s0 must be non-negative");
    }
    let s = &ctx.settings;
    let fgrid = FrequencyGrid::from_settings(s);
    let axis = |lo: f64, hi: f64, n: usize, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;

    let mut csv = String::from("d,s0,predicate_value,predicate,stable,spectral_abscissa,agrees,hurwitz_predicate,boundary\n");
    let (mut mismatches, mut boundary_points, mut hurwitz_mismatches) = (Vec::new(), 0usize, 0usize);
    let ds: Vec<f64> = (0..nd).map(|i| axis(d_lo, d_hi, nd, i)).collect();
    let s0s: Vec<f64> = (0..ns).map(|j| axis(s_lo, s_hi, ns, j)).collect();
    let mut points = Vec::with_capacity(nd * ns);
    for c in mass_spring_sweep(m, k, &ds, &s0s, &fgrid, s.stability_margin)? {
        let (d, s0) = (c.d, c.s0);
        let boundary = c.predicate_value.abs() <= 1e-6;
        boundary_points += boundary as usize;
        if !boundary && !c.predicate_agrees {
            mismatches.push(json!({ "d": d, "s0": s0, "spectral_abscissa": c.spectral_abscissa }));
        }
        if !boundary && c.hurwitz_predicate != c.stable {
            hurwitz_mismatches += 1;
        }
        csv.push_str(&format!(
            "{d},{s0},{},{},{},{},{},{},{}\n",
            c.predicate_value, c.predicate, c.stable, c.spectral_abscissa, c.predicate_agrees, c.hurwitz_predicate, boundary
        ));
        points.push((d, s0, c.stable));
    }
    ctx.write("example.csv", &csv)?;

    // boundary curves: predicate d = -m s0 and the eigenvalue threshold in d
    let stable_at = |d: f64, s0: f64| mass_spring_abscissa(m, d, s0, k).map(|a| a < -s.stability_margin);
    let mut bcsv = String::from("s0,d_predicate,d_eigen\n");
    let mut pred_curve = Vec::new();
    let mut eig_curve = Vec::new();
    for &s0 in &s0s {
        let d_pred = -m * s0;
        let d_eig = if !stable_at(d_lo, s0)? && stable_at(d_hi, s0)? {
            let (mut lo, mut hi) = (d_lo, d_hi);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if stable_at(mid, s0)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(0.5 * (lo + hi))
        } else {
            None
        };
        bcsv.push_str(&format!("{s0},{d_pred},{}\n", d_eig.map_or(String::new(), |v| v.to_string())));
        pred_curve.push((d_pred, s0));
        if let Some(v) = d_eig {
            eig_curve.push((v, s0));
        }
    }
    ctx.write("boundary.csv", &bcsv)?;
    ctx.plot("phase.svg", || {
        let curves = [
            Series { name: "d/m + s0 = 0".into(), points: pred_curve.clone() },
            Series { name: "eigenvalue boundary".into(), points: eig_curve.clone() },
        ];
        phase_chart("Mass-spring stability (green: stable)", "d", "s0", &points, &curves)
    })?;

    let mut rep = ctx.header("example");
    rep.insert("m".into(), json!(m));
    rep.insert("k".into(), json!(k));
    rep.insert("grid".into(), json!([nd, ns]));
    rep.insert("d_range".into(), json!([d_lo, d_hi]));
    rep.insert("s0_range".into(), json!([s_lo, s_hi]));
    rep.insert("points".into(), json!(nd * ns));
    rep.insert("boundary_points".into(), json!(boundary_points));
    rep.insert("predicate_mismatches".into(), json!(mismatches.len()));
    rep.insert("hurwitz_predicate_mismatches".into(), json!(hurwitz_mismatches));
    rep.insert("mismatch_samples".into(), json!(mismatches.iter().take(10).cloned().collect::<Vec<_>>()));
    rep.insert("files".into(), json!(["example.csv", "boundary.csv"]));
    ctx.finish("example.json", rep)?;
    Ok(Outcome::Ok)
}

fn gain_value(c: dissipcert::Result<GainCertificate>) -> Result<Option<f64>> {
    match c {
        Ok(c) => Ok(Some(c.value)),
        Err(Error::Unbounded { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn read_matrix(v: &Value, path: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).map_err(|e| anyhow!("{path}: {e}"))?;
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        bail!("{path}: ragged matrix");
    }
    Ok(DMatrix::from_row_iterator(rows.len(), n, rows.into_iter().flatten()))
}

fn transform(ctx: &Ctx, path: &Path, eps: &str, multiplier: Option<&Path>) -> Result<Outcome> {
    let cl: ClosedLoop = parse_loop(&read_input(path)?).map_err(qualify(path))?;
    let (ss1, ss2) = cl.lti_pair().ok_or_else(|| anyhow!("{}: transform needs an LTI pair", path.display()))?;
    let s = &ctx.settings;
    let opts = LoopOptions::from_settings(s);
    let eps: Vec<f64> = eps
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| anyhow!("--eps: cannot parse `{v}`")))
        .collect::<Result<_>>()?;
    let original = close_loop_lti(&ss1, &ss2).map_err(qualify(path))?;
    let base = gain_value(hinf_norm(&original, s.hinf_tol))?;
    let omegas = log_grid(s.freq_min, s.freq_max, 200);

    let mut rows = Vec::new();
    for &e in &eps {
        let t = transformed_r_ey(&ss1, &ss2, e, &opts).map_err(qualify(path))?;
        let g = gain_value(hinf_norm(&t, s.hinf_tol))?;
        let mut deviation = 0.0f64;
        for &w in &omegas {
            if let (Ok(a), Ok(b)) = (original.freq_response(w), t.freq_response(w)) {
                deviation = deviation.max((a.clone() - b).norm() / (1.0 + a.norm()));
            }
        }
        let env = OperatorExpr::feedback(OperatorExpr::lti(ss2.clone()), OperatorExpr::identity(ss2.n_inputs(), e)?)?
            .to_state_space()
            .expect("LTI feedback");
        let env_osp = osp_index(&env, &FrequencyGrid::from_settings(s))?.value;
        let rel = match (base, g) {
            (Some(a), Some(b)) => Some((a - b).abs() / a.max(f64::MIN_POSITIVE)),
            _ => None,
        };
        rows.push(json!({ "eps": e, "gain": g, "relative_difference": rel, "max_response_deviation": deviation, "environment_osp_index": env_osp }));
    }

    let mut rep = ctx.header("transform");
    rep.insert("input".into(), json!(path.display().to_string()));
    rep.insert("gain".into(), json!({ "value": base, "method": "hamiltonian_bisection", "tol": s.hinf_tol }));
    rep.insert("loop_transformation".into(), json!(rows));

    if let Some(mp) = multiplier {
        let v: Value = serde_json::from_str(&read_input(mp)?).map_err(|e| anyhow!("{}: $: {e}", mp.display()))?;
        let obj = v.as_object().ok_or_else(|| anyhow!("{}: $: expected an object", mp.display()))?;
        let get = |key: &str| -> Result<DMatrix<f64>> {
            let item = obj.get(key).ok_or_else(|| anyhow!("{}: $.{key}: missing", mp.display()))?;
            read_matrix(item, &format!("{}: $.{key}", mp.display()))
        };
        let (d1, d2) = (get("delta1")?, get("delta2")?);
        let mt = multiplier_transform(&ss1, &d1, &d2).map_err(qualify(mp))?;
        let mt: StateSpace = mt.to_state_space().expect("LTI multiplier transform");
        let g0 = gain_value(hinf_norm(&ss1, s.hinf_tol))?;
        let g1 = gain_value(hinf_norm(&mt, s.hinf_tol))?;
        rep.insert("multiplier".into(), json!({ "sigma1_gain": g0, "transformed_gain": g1, "method": "hamiltonian_bisection", "tol": s.hinf_tol }));
    }
    ctx.finish("transform.json", rep)?;
    Ok(if base.is_none() { Outcome::Unstable } else { Outcome::Ok })
}
