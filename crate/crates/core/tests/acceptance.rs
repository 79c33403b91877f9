//! Acceptance suite on the example configuration. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use petc_traffic::bounds::{regional_lower_bound_w0, BoundsTable};
use petc_traffic::config::RunConfig;
use petc_traffic::dynamics::LiftedDynamics;
use petc_traffic::linalg::sym_eig_max;
use petc_traffic::pipeline::{run_pipeline, simulate_batch, Artifacts, RunOptions, Stage};
use petc_traffic::sim::verify::verify;
use petc_traffic::sim::{exact_event_steps_w0, Disturbance, DisturbanceSpec, Simulator, Trace};

// Pinned tolerances and sample sizes.
const PIPELINE_TIME_LIMIT: Duration = Duration::from_secs(600);
const REFERENCE_EPSILON_S: f64 = 0.15;
const STARTS_PER_DISTURBANCE: usize = 1000;
const MIN_EVENTS: usize = 10_000;
const RAYS_PER_CONE: usize = 10_000;
const TIGHTNESS_SLACK: usize = 2;
const PHI0_EIG_TOL: f64 = 1e-9;
const LIFT_REL_TOL: f64 = 1e-8;
const QUADRATURE_REL_TOL: f64 = 1e-8;
const QUADRATURE_INTERVALS: usize = 1_000_000;
const QFORM_REL_TOL: f64 = 1e-10;
const QFORM_SAMPLES: usize = 100_000;

fn example_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/example.json");
    RunConfig::load(&path).expect("example config")
}

struct Full {
    cfg: RunConfig,
    art: Artifacts,
    elapsed: Duration,
    dir: tempfile::TempDir,
}

fn full_run(cfg: &RunConfig, jobs: usize) -> Full {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        jobs,
        ..RunOptions::default()
    };
    let t = Instant::now();
    let art = run_pipeline(cfg, &Stage::ALL, &opts).expect("pipeline");
    Full {
        cfg: cfg.clone(),
        art,
        elapsed: t.elapsed(),
        dir,
    }
}

/// Large batch: every disturbance kind from `STARTS_PER_DISTURBANCE` random starts.
fn big_batch(full: &Full) -> Vec<Trace> {
    let mut cfg = full.cfg.clone();
    cfg.simulation.runs = STARTS_PER_DISTURBANCE * cfg.simulation.disturbances.len();
    cfg.simulation.seed = 2024;
    let art = &full.art;
    let bounds = art.bounds.as_ref().unwrap();
    let trunc = art.pipes.as_ref().unwrap().truncation_radius;
    let (traces, _) = simulate_batch(
        &cfg,
        &art.system,
        &art.partition,
        &bounds.maei_table(),
        trunc,
        &art.summary.config_hash,
    )
    .unwrap();
    traces
}

fn criterion_1(full: &Full) -> Result<String, String> {
    let eps = full.art.abstraction.as_ref().unwrap().precision();
    let n = full.art.abstraction.as_ref().unwrap().states.len();
    let detail = format!(
        "pipeline {:.1}s, {n} states, epsilon = {eps:.3} s (reference {REFERENCE_EPSILON_S} s)",
        full.elapsed.as_secs_f64()
    );
    if full.elapsed < PIPELINE_TIME_LIMIT && eps.is_finite() && n == 48 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2(full: &Full, traces: &[Trace]) -> Result<String, String> {
    let abs = full.art.abstraction.as_ref().unwrap();
    let mut per_kind: BTreeMap<&'static str, (usize, usize, usize)> = BTreeMap::new();
    let mut bad = Vec::new();
    for t in traces {
        let kind = match t.disturbance {
            DisturbanceSpec::Zero => "zero",
            DisturbanceSpec::Sinusoid { .. } => "sinusoid",
            DisturbanceSpec::PiecewiseRandom { .. } => "random",
            DisturbanceSpec::Step { .. } => "step",
        };
        let entry = per_kind.entry(kind).or_default();
        entry.0 += 1;
        for e in &t.events {
            let s = abs.state(e.source).unwrap();
            entry.1 += 1;
            if !(s.k_lo <= e.steps && e.steps <= s.k_hi) {
                entry.2 += 1;
                bad.push((e.source, e.steps, s.k_lo, s.k_hi));
            }
        }
    }
    let detail = per_kind
        .iter()
        .map(|(k, (runs, ev, v))| format!("{k}: {runs} starts, {ev} events, {v} violations"))
        .collect::<Vec<_>>()
        .join("; ");
    let enough = per_kind.len() == 3 && per_kind.values().all(|(r, _, _)| *r >= STARTS_PER_DISTURBANCE);
    if bad.is_empty() && enough {
        Ok(detail)
    } else {
        Err(format!("{detail}; first violations {:?}", &bad[..bad.len().min(5)]))
    }
}

fn criterion_3(full: &Full) -> Result<String, String> {
    let art = &full.art;
    let bounds = art.bounds.as_ref().unwrap();
    let cap = bounds.l_bar + 50;
    let dynamics = LiftedDynamics::new(&art.system, cap);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tight = Vec::new();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for cone in &art.partition.cones {
        let pair = &cone.pairs[0];
        let (mut lo, mut hi) = (usize::MAX, 0);
        let mut sampled = 0;
        while sampled < RAYS_PER_CONE {
            let t = rng.gen_range(pair.lo..pair.hi);
            let x = DVector::from_vec(vec![t.cos(), t.sin()]);
            if art.partition.classify_cone(&x) != cone.s1 {
                continue; // boundary ray owned by the neighbour
            }
            sampled += 1;
            let k = exact_event_steps_w0(&dynamics, &x, cap).unwrap_or(usize::MAX);
            lo = lo.min(k);
            hi = hi.max(k);
        }
        let cb = bounds.cone(cone.s1);
        let (k_lo, k_hi) = (cb.k_lower_w0 + 1, cb.k_upper_w0);
        lines.push(format!("{}:[{k_lo},{k_hi}]~[{lo},{hi}]", cone.s1));
        if lo < k_lo || hi > k_hi {
            failures.push(cone.s1);
        }
        if lo.saturating_sub(k_lo) <= TIGHTNESS_SLACK || k_hi.saturating_sub(hi) <= TIGHTNESS_SLACK {
            tight.push(cone.s1);
        }
    }
    let detail = format!("bounds~observed {}; tight cones {:?}", lines.join(" "), tight);
    if failures.is_empty() && !tight.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; unsound cones {failures:?}"))
    }
}

fn criterion_4(full: &Full, traces: &[Trace]) -> Result<String, String> {
    let art = &full.art;
    let abs = art.abstraction.as_ref().unwrap();
    let pipes = art.pipes.as_ref().unwrap();
    let report = verify(traces, abs, Some(pipes)).unwrap();
    let mut detail = format!(
        "{} events, {} pipe checks ({} violations), {} edge checks ({} violations), {} beyond truncation",
        report.events,
        report.pipes_checked,
        report.pipe_violations,
        report.edges_checked,
        report.edge_violations,
        report.excursions
    );
    let sound = report.pipe_violations == 0
        && report.edge_violations == 0
        && report.pipes_checked >= MIN_EVENTS
        && report.edges_checked >= MIN_EVENTS;

    // mutation: drop the most frequently used edge
    let mut usage: BTreeMap<_, usize> = BTreeMap::new();
    for t in traces {
        for e in &t.events {
            *usage.entry((e.source, e.dest)).or_default() += 1;
        }
    }
    let (&edge, _) = usage.iter().max_by_key(|(_, n)| **n).unwrap();
    let mut mutated = abs.clone();
    mutated.edges.remove(&edge);
    let caught = verify(traces, &mutated, Some(pipes)).unwrap();
    let detected = !caught.passed && caught.edge_violations > 0;
    detail.push_str(&format!(
        "; removing edge {}->{} detected: {detected}",
        edge.0, edge.1
    ));
    if sound && detected {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn criterion_5(full: &Full) -> Result<String, String> {
    let art = &full.art;
    let sys = &art.system;
    let l_bar = art.bounds.as_ref().unwrap().l_bar;
    let dynamics = LiftedDynamics::new(sys, l_bar);
    let mut problems = Vec::new();

    let phi0 = sym_eig_max(&dynamics.phi1(0));
    if phi0 > PHI0_EIG_TOL {
        problems.push(format!("lambda_max(Phi1(0)) = {phi0:e}"));
    }

    // lifted map against the stepped simulator with the input held
    let sim = Simulator::new(sys, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_lift: f64 = 0.0;
    for _ in 0..20 {
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
        let v_hat = &sys.controller.d * (&sys.plant.c * &x);
        let mut xs = x.clone();
        for k in 1..=l_bar {
            xs = sim.plant_step(&xs, &v_hat, &Disturbance::zero(1), 0.0);
            let lifted = dynamics.m(k) * &x;
            worst_lift = worst_lift.max((&lifted - &xs).norm() / xs.norm());
        }
    }
    if worst_lift > LIFT_REL_TOL {
        problems.push(format!("M(k)x relative error {worst_lift:e}"));
    }

    // growth bounds against quadrature of their defining integrals
    let a = &sys.plant.a;
    let lam = sym_eig_max(&(a + a.transpose()));
    let e_norm = sys.plant.e.column(0).norm();
    let w = sys.params.w_bound;
    let h = sys.h();
    let mut worst_quad: f64 = 0.0;
    for k in [1, 2, 10, l_bar / 2, l_bar] {
        let t = k as f64 * h;
        let d = simpson(|s| (lam * (t - s)).exp(), 0.0, t, QUADRATURE_INTERVALS);
        worst_quad = worst_quad.max(rel(dynamics.d_ap(k), d));
        let th = simpson(|s| (0.5 * lam * (t - s)).exp(), 0.0, t, QUADRATURE_INTERVALS) * e_norm * w;
        worst_quad = worst_quad.max(rel(dynamics.theta_radius(k), th));
    }
    if worst_quad > QUADRATURE_REL_TOL {
        problems.push(format!("growth bound relative error {worst_quad:e}"));
    }

    // trigger form against the direct mismatch expression
    let sigma = sys.params.sigma;
    let gain = sys.controller.d.clone();
    let mut worst_q: f64 = 0.0;
    for _ in 0..QFORM_SAMPLES {
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-10.0..10.0));
        let y_hat = DVector::from_fn(2, |_, _| rng.gen_range(-10.0..10.0));
        let v_hat = DVector::from_fn(1, |_, _| rng.gen_range(-10.0..10.0));
        let u = DVector::from_vec(vec![x[0], x[1], (&gain * &y_hat)[0]]);
        let uh = DVector::from_vec(vec![y_hat[0], y_hat[1], v_hat[0]]);
        let direct = (&u - &uh).norm_squared() - sigma * u.norm_squared();
        let scale = (&u - &uh).norm_squared() + sigma * u.norm_squared();
        let q = sys.trigger_value_held(&x, &uh);
        worst_q = worst_q.max((q - direct).abs() / scale);
    }
    if worst_q > QFORM_REL_TOL {
        problems.push(format!("Q-form relative error {worst_q:e}"));
    }
    let detail = format!(
        "lambda_max(Phi1(0)) = {phi0:.2e}, lift err {worst_lift:.2e}, quadrature err {worst_quad:.2e}, Q-form err {worst_q:.2e}"
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join(", ")))
    }
}

fn criterion_6(full: &Full) -> Result<String, String> {
    let mut cfg0 = full.cfg.clone();
    cfg0.w_bound = 0.0;
    cfg0.simulation.disturbances = vec![DisturbanceSpec::Zero];
    cfg0.simulation.scenarios.clear();
    cfg0.simulation.runs = 0;
    let opts = RunOptions::default();
    let art0 = run_pipeline(&cfg0, &[Stage::Abstract], &opts).map_err(|e| e.to_string())?;
    let b0: &BoundsTable = art0.bounds.as_ref().unwrap();

    // independent unperturbed lower-bound search per cone
    let sys = &art0.system;
    let dynamics = LiftedDynamics::new(sys, b0.l_bar);
    let sdp = cfg0.solver.sdp();
    let mut mismatches = Vec::new();
    for r in &b0.regions {
        let xi = art0.partition.cone(r.region.s1).xi_matrices(2);
        let cor1 = regional_lower_bound_w0(&dynamics, &xi, b0.l_bar, &sdp).k;
        if r.k_lower_perturbed != cor1 || r.k_lower_w0 != cor1 {
            mismatches.push(r.region);
        }
    }

    let eps0 = art0.abstraction.as_ref().unwrap().precision();
    let eps2 = full.art.abstraction.as_ref().unwrap().precision();
    let detail = format!(
        "{} regions, {} mismatches; epsilon(W=0) = {eps0:.3} s <= epsilon(W=2) = {eps2:.3} s",
        b0.regions.len(),
        mismatches.len()
    );
    if mismatches.is_empty() && eps0 <= eps2 {
        Ok(detail)
    } else {
        Err(format!("{detail}; mismatched {mismatches:?}"))
    }
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_7(full: &Full) -> Result<String, String> {
    let other = full_run(&full.cfg, 3);
    let a = files(full.dir.path());
    let b = files(other.dir.path());
    let differing: Vec<_> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect();
    let detail = format!("{} artifacts compared across --jobs 1 and --jobs 3", a.len());
    let has_exports = a.contains_key(Path::new("abstraction.json")) && a.contains_key(Path::new("abstraction.dot"));
    if differing.is_empty() && has_exports {
        Ok(detail)
    } else {
        Err(format!("{detail}; differing {differing:?}"))
    }
}

fn run(n: usize, f: impl FnOnce() -> Result<String, String>) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(d) => {
            println!("acceptance criterion {n}: PASS - {d}");
            true
        }
        Err(d) => {
            println!("acceptance criterion {n}: FAIL - {d}");
            false
        }
    }
}

fn main() {
    let cfg = example_config();
    let full = full_run(&cfg, 1);
    let traces = big_batch(&full);
    let results = [
        run(1, || criterion_1(&full)),
        run(2, || criterion_2(&full, &traces)),
        run(3, || criterion_3(&full)),
        run(4, || criterion_4(&full, &traces)),
        run(5, || criterion_5(&full)),
        run(6, || criterion_6(&full)),
        run(7, || criterion_7(&full)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
