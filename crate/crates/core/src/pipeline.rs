//! Stage orchestration: partition → bounds → reach → abstraction → simulation → verification.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{assemble, complete_edges, Abstraction, AbstractionError, AbstractionMeta};
use crate::bounds::{compute_bounds, BoundsError, BoundsTable};
use crate::config::{ConfigError, RunConfig};
use crate::dynamics::{choose_psi_mu, LiftedDynamics};
use crate::io::{to_stable_json, write_stable_json, write_text};
use crate::model::PetcSystem;
use crate::partition::{Partition, RegionId};
use crate::reach::{build_flow_pipe, successors, FlowPipeSet, ReachError};
use crate::sim::verify::{verify, VerifyError, VerifyReport};
use crate::sim::{sample_in_region, Disturbance, DisturbanceSpec, SimError, Simulator, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Partition,
    Bounds,
    Reach,
    Abstract,
    Simulate,
    Verify,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Partition,
        Stage::Bounds,
        Stage::Reach,
        Stage::Abstract,
        Stage::Simulate,
        Stage::Verify,
    ];

    fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Partition => &[],
            Stage::Bounds => &[Stage::Partition],
            Stage::Reach => &[Stage::Bounds],
            Stage::Abstract => &[Stage::Reach],
            Stage::Simulate => &[Stage::Bounds],
            Stage::Verify => &[Stage::Abstract, Stage::Simulate],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Partition => "partition",
            Stage::Bounds => "bounds",
            Stage::Reach => "reach",
            Stage::Abstract => "abstract",
            Stage::Simulate => "simulate",
            Stage::Verify => "verify",
        }
    }
}

/// Requested stages plus everything they depend on.
pub fn with_dependencies(stages: &[Stage]) -> BTreeSet<Stage> {
    let mut out = BTreeSet::new();
    let mut todo: Vec<Stage> = stages.to_vec();
    while let Some(s) = todo.pop() {
        if out.insert(s) {
            todo.extend_from_slice(s.deps());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Dot,
    Csv,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    /// JSON artifacts are always written; DOT and CSV on request.
    pub formats: BTreeSet<Format>,
    pub jobs: usize,
    /// Reuse `bounds.json` from the output directory when its hash matches.
    pub stage_cache: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out: None,
            formats: [Format::Json, Format::Dot, Format::Csv].into_iter().collect(),
            jobs: 1,
            stage_cache: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bounds: {0}")]
    Bounds(#[from] BoundsError),
    #[error("reach: {0}")]
    Reach(#[from] ReachError),
    #[error("abstraction: {0}")]
    Abstraction(#[from] AbstractionError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("verify: {0}")]
    Verify(#[from] VerifyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed artifact {path}: {detail}")]
    Artifact { path: String, detail: String },
    #[error("thread pool: {0}")]
    Threads(String),
}

impl PipelineError {
    /// 2 for invalid input, 1 for failures during computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub passed: bool,
    pub events: usize,
    pub interval_violations: usize,
    pub edge_violations: usize,
    pub pipe_violations: usize,
    pub excursions: usize,
}

impl From<&VerifyReport> for VerifySummary {
    fn from(r: &VerifyReport) -> Self {
        Self {
            passed: r.passed,
            events: r.events,
            interval_violations: r.interval_violations,
            edge_violations: r.edge_violations,
            pipe_violations: r.pipe_violations,
            excursions: r.excursions,
        }
    }
}

/// Machine-readable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub stages: Vec<Stage>,
    pub n_regions: usize,
    pub l_bar: Option<usize>,
    pub epsilon_s: Option<f64>,
    pub edges: Option<usize>,
    pub complete_graph: bool,
    /// `[s1, s2, k_lo, k_hi]` per region.
    pub intervals: Option<Vec<[usize; 4]>>,
    pub traces: Option<usize>,
    pub verify: Option<VerifySummary>,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub system: PetcSystem,
    pub partition: Partition,
    pub bounds: Option<BoundsTable>,
    pub pipes: Option<FlowPipeSet>,
    pub abstraction: Option<Abstraction>,
    pub traces: Option<Vec<Trace>>,
    pub scenarios: Vec<Trace>,
    pub report: Option<VerifyReport>,
    pub summary: Summary,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    stages: Vec<Stage>,
    completed: Vec<Stage>,
    failed: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionFile {
    config_hash: String,
    partition: Partition,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceSet {
    pub config_hash: String,
    pub traces: Vec<Trace>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

struct Writer<'a> {
    out: Option<&'a Path>,
    manifest: Manifest,
}

impl Writer<'_> {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.out.map(|d| d.join(name))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        if let Some(p) = self.path(name) {
            write_stable_json(&p, value)?;
        }
        Ok(())
    }

    fn text(&self, name: &str, text: &str) -> Result<(), PipelineError> {
        if let Some(p) = self.path(name) {
            write_text(&p, text)?;
        }
        Ok(())
    }

    fn done(&mut self, stage: Stage) -> Result<(), PipelineError> {
        self.manifest.completed.push(stage);
        self.json("manifest.json", &self.manifest)
    }

    fn fail(&mut self, stage: Stage, err: &PipelineError) {
        self.manifest.failed = Some(format!("{}: {err}", stage.name()));
        if let Err(e) = self.json("manifest.json", &self.manifest) {
            warn!("could not record failure in manifest: {e}");
        }
    }
}

/// Runs the requested stages (and their dependencies) on a pool of `opts.jobs` threads.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage], opts: &RunOptions) -> Result<Artifacts, PipelineError> {
    let (system, partition) = cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Threads(e.to_string()))?;
    pool.install(|| run_stages(cfg, system, partition, stages, opts))
}

fn run_stages(
    cfg: &RunConfig,
    system: PetcSystem,
    partition: Partition,
    stages: &[Stage],
    opts: &RunOptions,
) -> Result<Artifacts, PipelineError> {
    let hash = cfg.hash();
    let selected = with_dependencies(stages);
    let mut w = Writer {
        out: opts.out.as_deref(),
        manifest: Manifest {
            config_hash: hash.clone(),
            stages: selected.iter().copied().collect(),
            completed: Vec::new(),
            failed: None,
        },
    };
    w.json("manifest.json", &w.manifest)?;

    let mut art = Artifacts {
        system,
        partition,
        bounds: None,
        pipes: None,
        abstraction: None,
        traces: None,
        scenarios: Vec::new(),
        report: None,
        summary: Summary {
            config_hash: hash.clone(),
            stages: selected.iter().copied().collect(),
            n_regions: 0,
            l_bar: None,
            epsilon_s: None,
            edges: None,
            complete_graph: false,
            intervals: None,
            traces: None,
            verify: None,
        },
    };
    art.summary.n_regions = art.partition.n_regions();
    let mut dynamics = None;
    for stage in selected.iter().copied() {
        info!("stage {}", stage.name());
        if let Err(e) = run_stage(stage, cfg, &hash, opts, &mut w, &mut art, &mut dynamics) {
            w.fail(stage, &e);
            return Err(e);
        }
        w.done(stage)?;
    }
    w.json("summary.json", &art.summary)?;
    Ok(art)
}

fn run_stage(
    stage: Stage,
    cfg: &RunConfig,
    hash: &str,
    opts: &RunOptions,
    w: &mut Writer,
    art: &mut Artifacts,
    dynamics: &mut Option<LiftedDynamics>,
) -> Result<(), PipelineError> {
    let sys = art.system.clone();
    match stage {
        Stage::Partition => {
            w.json(
                "partition.json",
                &PartitionFile {
                    config_hash: hash.to_string(),
                    partition: art.partition.clone(),
                },
            )?;
        }
        Stage::Bounds => {
            let cached = match w.path("bounds.json") {
                Some(p) if opts.stage_cache && p.exists() => read_json::<BoundsTable>(&p)
                    .ok()
                    .filter(|b| b.config_hash == hash),
                _ => None,
            };
            let table = match cached {
                Some(t) => {
                    info!("reusing cached bounds");
                    t
                }
                None => {
                    let lifted = dynamics.get_or_insert_with(|| LiftedDynamics::new(&sys, cfg.solver.k_cap));
                    let spec = choose_psi_mu(&sys, cfg.solver.psi_scale);
                    let mut t = compute_bounds(&art.partition, lifted, &spec, cfg.solver.psi_scale, &cfg.solver.sdp())?;
                    t.config_hash = hash.to_string();
                    t
                }
            };
            if table.unknown_count() > 0 {
                warn!("{} LMIs were undecided and treated as infeasible", table.unknown_count());
            }
            w.json("bounds.json", &table)?;
            if opts.formats.contains(&Format::Csv) {
                w.text("bounds.csv", &table.to_csv())?;
            }
            art.summary.l_bar = Some(table.l_bar);
            art.bounds = Some(table);
        }
        Stage::Reach => {
            let bounds = art.bounds.as_ref().expect("bounds stage ran");
            let settings = cfg.reach_settings();
            if art.partition.n_x != 2 {
                warn!(
                    "flow pipes are only computed for 2 states (got {}); using the complete transition graph",
                    art.partition.n_x
                );
                return Ok(());
            }
            let lifted = dynamics.get_or_insert_with(|| LiftedDynamics::new(&sys, bounds.l_bar.max(1)));
            if lifted.k_max() < bounds.l_bar {
                *lifted = LiftedDynamics::new(&sys, bounds.l_bar);
            }
            let lifted = &*lifted;
            let part = &art.partition;
            let pipes = bounds
                .regions
                .par_iter()
                .map(|rb| build_flow_pipe(lifted, part, rb, &settings))
                .collect::<Result<Vec<_>, _>>()?;
            let set = FlowPipeSet {
                config_hash: hash.to_string(),
                truncation_radius: settings.truncation_for(part)?,
                arc_segments: settings.arc_segments,
                ball_sides: settings.ball_sides,
                pipes,
            };
            w.json("flow_pipes.json", &set)?;
            art.pipes = Some(set);
        }
        Stage::Abstract => {
            let bounds = art.bounds.as_ref().expect("bounds stage ran");
            let settings = cfg.reach_settings();
            let part = &art.partition;
            let (edges, complete) = match &art.pipes {
                Some(set) => {
                    let lists: Vec<Vec<RegionId>> = set
                        .pipes
                        .par_iter()
                        .map(|p| successors(p, part, &settings))
                        .collect();
                    let edges: BTreeSet<(RegionId, RegionId)> = set
                        .pipes
                        .iter()
                        .zip(lists)
                        .flat_map(|(p, l)| l.into_iter().map(move |t| (p.region, t)))
                        .collect();
                    (edges, false)
                }
                None => (complete_edges(part), true),
            };
            let meta = AbstractionMeta {
                config_hash: hash.to_string(),
                h: sys.h(),
                sigma: sys.params.sigma,
                w_bound: sys.params.w_bound,
                n_x: part.n_x,
                q1: part.q1,
                q2: part.q2,
                radii: part.radii.clone(),
                truncation_radius: art.pipes.as_ref().map(|p| p.truncation_radius),
                l_bar: bounds.l_bar,
                psi_scale: cfg.solver.psi_scale,
                lower_bound: String::new(),
                min_solver_margin: None,
                solver_unknown: 0,
                complete_graph: complete,
            };
            let abs = assemble(part, bounds, edges, meta)?;
            w.text("abstraction.json", &abs.to_json())?;
            if opts.formats.contains(&Format::Dot) {
                w.text("abstraction.dot", &abs.to_dot())?;
            }
            art.summary.epsilon_s = Some(crate::io::round_sig(abs.precision()));
            art.summary.edges = Some(abs.edges.len());
            art.summary.complete_graph = complete;
            art.summary.intervals = Some(
                abs.states
                    .iter()
                    .map(|s| [s.id.s1, s.id.s2, s.k_lo, s.k_hi])
                    .collect(),
            );
            art.abstraction = Some(abs);
        }
        Stage::Simulate => {
            let bounds = art.bounds.as_ref().expect("bounds stage ran");
            let truncation = cfg.reach_settings().truncation_for(&art.partition).unwrap_or(f64::INFINITY);
            let (traces, scenarios) = simulate_batch(cfg, &sys, &art.partition, &bounds.maei_table(), truncation, hash)?;
            w.json(
                "traces.json",
                &TraceSet {
                    config_hash: hash.to_string(),
                    traces: traces.clone(),
                },
            )?;
            for (i, s) in scenarios.iter().enumerate() {
                w.json(&format!("scenario_{i}.json"), s)?;
                if opts.formats.contains(&Format::Csv) {
                    w.text(&format!("scenario_{i}.csv"), &s.to_csv())?;
                }
            }
            art.summary.traces = Some(traces.len() + scenarios.len());
            art.traces = Some(traces);
            art.scenarios = scenarios;
        }
        Stage::Verify => {
            let abs = art.abstraction.as_ref().expect("abstract stage ran");
            let mut all = art.traces.clone().unwrap_or_default();
            all.extend(art.scenarios.iter().cloned());
            let report = verify(&all, abs, art.pipes.as_ref())?;
            w.json("verify.json", &report)?;
            art.summary.verify = Some(VerifySummary::from(&report));
            art.report = Some(report);
        }
    }
    Ok(())
}

/// Random runs (starts cycling over regions, disturbances cycling over the configured
/// list) plus the configured scenarios. Each random run has its own generator stream,
/// so results do not depend on the thread count. Random runs keep events only.
pub fn simulate_batch(
    cfg: &RunConfig,
    sys: &PetcSystem,
    partition: &Partition,
    maei: &[usize],
    truncation: f64,
    hash: &str,
) -> Result<(Vec<Trace>, Vec<Trace>), PipelineError> {
    let sim_cfg = &cfg.simulation;
    let sim = Simulator::new(sys, sim_cfg.substeps)?;
    let steps = cfg.horizon_steps();
    let n_w = sys.plant.n_disturbances();
    let ids: Vec<RegionId> = partition.region_ids().collect();
    let n_d = sim_cfg.disturbances.len().max(1);
    let traces = (0..sim_cfg.runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sim_cfg.seed);
            rng.set_stream(i as u64);
            let id = ids[(i / n_d) % ids.len()];
            let x0 = sample_in_region(partition, id, truncation, &mut rng);
            let spec = match &sim_cfg.disturbances[i % n_d] {
                DisturbanceSpec::PiecewiseRandom { cap, hold_steps, .. } => DisturbanceSpec::PiecewiseRandom {
                    cap: *cap,
                    hold_steps: *hold_steps,
                    seed: rng.gen(),
                },
                other => other.clone(),
            };
            let w = Disturbance::realize(&spec, n_w, sys.h(), sim_cfg.horizon_s, sys.params.w_bound)?;
            let mut trace = sim.simulate(partition, maei, &x0, &w, steps)?;
            trace.states.clear();
            trace.config_hash = hash.to_string();
            trace.seed = Some(sim_cfg.seed);
            trace.run = Some(i);
            Ok(trace)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let scenarios = sim_cfg
        .scenarios
        .iter()
        .map(|s| {
            let w = Disturbance::realize(&s.disturbance, n_w, sys.h(), sim_cfg.horizon_s, sys.params.w_bound)?;
            let x0 = nalgebra::DVector::from_column_slice(&s.x0);
            let mut trace = sim.simulate(partition, maei, &x0, &w, steps)?;
            trace.config_hash = hash.to_string();
            Ok(trace)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok((traces, scenarios))
}

/// Verifies the artifacts stored in `dir` against each other (and `expected_hash`
/// when given).
pub fn verify_dir(dir: &Path, expected_hash: Option<&str>) -> Result<VerifyReport, PipelineError> {
    let abs_text = std::fs::read_to_string(dir.join("abstraction.json"))?;
    let abs = Abstraction::from_json(&abs_text)?;
    if let Some(h) = expected_hash {
        if abs.meta.config_hash != h {
            return Err(VerifyError::HashMismatch {
                what: "configuration".into(),
                found: h.to_string(),
                expected: abs.meta.config_hash.clone(),
            }
            .into());
        }
    }
    let pipes_path = dir.join("flow_pipes.json");
    let pipes: Option<FlowPipeSet> = if pipes_path.exists() {
        Some(read_json(&pipes_path)?)
    } else {
        None
    };
    let set: TraceSet = read_json(&dir.join("traces.json"))?;
    if set.config_hash != abs.meta.config_hash {
        return Err(VerifyError::HashMismatch {
            what: "traces.json".into(),
            found: set.config_hash,
            expected: abs.meta.config_hash.clone(),
        }
        .into());
    }
    let mut traces = set.traces;
    let mut i = 0;
    loop {
        let p = dir.join(format!("scenario_{i}.json"));
        if !p.exists() {
            break;
        }
        traces.push(read_json(&p)?);
        i += 1;
    }
    let report = verify(&traces, &abs, pipes.as_ref())?;
    write_stable_json(&dir.join("verify.json"), &report)?;
    Ok(report)
}

/// Summary as printed on standard output.
pub fn summary_json(summary: &Summary) -> String {
    to_stable_json(summary).expect("summary serializes")
}
