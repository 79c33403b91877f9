//! Closed-loop PETC simulation used as ground truth for the bounds and the abstraction.

pub mod disturbance;
pub mod verify;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{exp_integral, LiftedDynamics};
use crate::io::fmt_f64;
use crate::model::PetcSystem;
use crate::partition::{Partition, RegionId};

pub use disturbance::{Disturbance, DisturbanceSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("disturbance: {0}")]
    Disturbance(String),
    #[error("disturbance norm {sup} exceeds the bound {bound}")]
    DisturbanceBound { sup: f64, bound: f64 },
    #[error("MAEI table has {got} entries, the partition has {expected} cones")]
    MaeiTable { expected: usize, got: usize },
    #[error("initial state has {got} entries, expected {expected}")]
    StateDimension { expected: usize, got: usize },
    #[error("substep count must be even and positive, got {0}")]
    Substeps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    Quadratic,
    Maei,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Sample index of the previous event.
    pub k_start: usize,
    /// Sample index of this event.
    pub k_event: usize,
    pub steps: usize,
    pub source: RegionId,
    pub dest: RegionId,
    pub reason: TriggerReason,
    pub state_start: Vec<f64>,
    pub state_event: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Generator stream of a random run (replay with the same seed and stream).
    #[serde(default)]
    pub run: Option<usize>,
    pub h: f64,
    pub disturbance: DisturbanceSpec,
    /// States `[xp; xc]` at every sample, starting at `t = 0`; empty when not recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<Vec<f64>>,
    /// Completed inter-event intervals; the update at `t = 0` is implicit.
    pub events: Vec<EventRecord>,
}

impl Trace {
    /// Sample indices of all updates, including `0`.
    pub fn event_samples(&self) -> Vec<usize> {
        std::iter::once(0).chain(self.events.iter().map(|e| e.k_event)).collect()
    }

    /// Delimited text: one line per sample.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = format!(
            "# config_hash={} seed={} h={}\n",
            self.config_hash,
            self.seed.map_or("none".into(), |s| s.to_string()),
            fmt_f64(self.h)
        );
        out.push_str("t");
        for i in 0..n {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push_str(",event,s1,s2,reason\n");
        let mut next = self.events.iter().peekable();
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&fmt_f64(k as f64 * self.h));
            for v in x {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            match next.peek() {
                Some(e) if e.k_event == k => {
                    let reason = match e.reason {
                        TriggerReason::Quadratic => "quadratic",
                        TriggerReason::Maei => "maei",
                    };
                    out.push_str(&format!(",1,{},{},{}\n", e.dest.s1, e.dest.s2, reason));
                    next.next();
                }
                _ if k == 0 => {
                    out.push_str(",1,,,initial\n");
                }
                _ => out.push_str(",0,,,\n"),
            }
        }
        out
    }
}

/// Exact sampled-data integrator: zero-order-hold input plus composite Simpson
/// quadrature of the disturbance convolution over each sampling interval.
#[derive(Debug, Clone)]
pub struct Simulator {
    sys: PetcSystem,
    ad: DMatrix<f64>,
    bd: DMatrix<f64>,
    kernels: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
    substeps: usize,
}

pub const DEFAULT_SUBSTEPS: usize = 100;

impl Simulator {
    pub fn new(sys: &PetcSystem, substeps: usize) -> Result<Self, SimError> {
        if substeps == 0 || substeps % 2 == 1 {
            return Err(SimError::Substeps(substeps));
        }
        let h = sys.h();
        let a = &sys.plant.a;
        let (ad, j) = exp_integral(a, h).expect("validated plant");
        let bd = j * &sys.plant.b;
        let ds = h / substeps as f64;
        let mut kernels = Vec::with_capacity(substeps + 1);
        let mut weights = Vec::with_capacity(substeps + 1);
        for i in 0..=substeps {
            let s = i as f64 * ds;
            let (e, _) = exp_integral(a, h - s).expect("validated plant");
            kernels.push(e * &sys.plant.e);
            let w = if i == 0 || i == substeps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weights.push(w * ds / 3.0);
        }
        Ok(Self {
            sys: sys.clone(),
            ad,
            bd,
            kernels,
            weights,
            substeps,
        })
    }

    pub fn system(&self) -> &PetcSystem {
        &self.sys
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Plant state one sample after `t0` under held input `v_hat`.
    pub fn plant_step(&self, xp: &DVector<f64>, v_hat: &DVector<f64>, w: &Disturbance, t0: f64) -> DVector<f64> {
        let mut next = &self.ad * xp + &self.bd * v_hat;
        if !w.is_zero() {
            let ds = self.sys.h() / self.substeps as f64;
            for (i, (g, wt)) in self.kernels.iter().zip(&self.weights).enumerate() {
                next += g * w.value(t0 + i as f64 * ds) * *wt;
            }
        }
        next
    }

    fn held_input(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let np = self.sys.n_p();
        let nc = self.sys.n_c();
        let y_hat = &self.sys.plant.c * x.rows(0, np);
        let ctrl = &self.sys.controller;
        let v_hat = &ctrl.c * x.rows(np, nc) + &ctrl.d * &y_hat;
        (y_hat, v_hat)
    }

    /// Runs the loop for `steps` samples from `x0`. An event fires at a sample when
    /// the trigger form is positive or when the MAEI of the cone recorded at the
    /// previous event has elapsed.
    pub fn simulate(
        &self,
        partition: &Partition,
        maei: &[usize],
        x0: &DVector<f64>,
        w: &Disturbance,
        steps: usize,
    ) -> Result<Trace, SimError> {
        let sys = &self.sys;
        let (np, nc, nx) = (sys.n_p(), sys.n_c(), sys.n_x());
        if x0.len() != nx {
            return Err(SimError::StateDimension {
                expected: nx,
                got: x0.len(),
            });
        }
        if maei.len() != partition.cones.len() {
            return Err(SimError::MaeiTable {
                expected: partition.cones.len(),
                got: maei.len(),
            });
        }
        let h = sys.h();
        let bound = sys.params.w_bound * (1.0 + 1e-12);
        let mut x = x0.clone();
        let (mut y_hat, mut v_hat) = self.held_input(&x);
        let mut u_hat = DVector::zeros(y_hat.len() + v_hat.len());
        u_hat.rows_mut(0, y_hat.len()).copy_from(&y_hat);
        u_hat.rows_mut(y_hat.len(), v_hat.len()).copy_from(&v_hat);
        let mut last = 0;
        let mut source = partition.classify(&x);
        let mut start = x.clone();
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x.iter().copied().collect());
        let mut events = Vec::new();
        for k in 1..=steps {
            let t0 = (k - 1) as f64 * h;
            if !w.is_zero() {
                let ds = h / self.substeps as f64;
                for i in 0..=self.substeps {
                    let n = w.value(t0 + i as f64 * ds).norm();
                    if n > bound {
                        return Err(SimError::DisturbanceBound {
                            sup: n,
                            bound: sys.params.w_bound,
                        });
                    }
                }
            }
            let xp = self.plant_step(&x.rows(0, np).into_owned(), &v_hat, w, t0);
            let ctrl = &sys.controller;
            let xc = &ctrl.a * x.rows(np, nc) + &ctrl.b * &y_hat;
            x.rows_mut(0, np).copy_from(&xp);
            x.rows_mut(np, nc).copy_from(&xc);
            states.push(x.iter().copied().collect());

            let elapsed = k - last;
            let reason = if sys.trigger_value_held(&x, &u_hat) > 0.0 {
                Some(TriggerReason::Quadratic)
            } else if elapsed >= maei[source.s1 - 1] {
                Some(TriggerReason::Maei)
            } else {
                None
            };
            if let Some(reason) = reason {
                let dest = partition.classify(&x);
                events.push(EventRecord {
                    k_start: last,
                    k_event: k,
                    steps: elapsed,
                    source,
                    dest,
                    reason,
                    state_start: start.iter().copied().collect(),
                    state_event: x.iter().copied().collect(),
                });
                (y_hat, v_hat) = self.held_input(&x);
                u_hat.rows_mut(0, y_hat.len()).copy_from(&y_hat);
                let ny = y_hat.len();
                u_hat.rows_mut(ny, v_hat.len()).copy_from(&v_hat);
                last = k;
                source = dest;
                start = x.clone();
            }
        }
        Ok(Trace {
            config_hash: String::new(),
            seed: None,
            run: None,
            h,
            disturbance: w.spec.clone(),
            states,
            events,
        })
    }
}

/// Undisturbed inter-event steps from `x`: the first `k` in `1..=k_cap` at which the
/// trigger form evaluated on the lifted state is positive, `None` if there is none.
pub fn exact_event_steps_w0(dynamics: &LiftedDynamics, x: &DVector<f64>, k_cap: usize) -> Option<usize> {
    let sys = dynamics.system();
    let u_hat = sys.c_e() * x;
    (1..=k_cap.min(dynamics.k_max())).find(|&k| sys.trigger_value_held(&(dynamics.m(k) * x), &u_hat) > 0.0)
}

/// Uniform sample from a region; the unbounded shell is cut at `truncation`.
/// Planar regions are sampled directly, others by rejection.
pub fn sample_in_region<R: Rng>(partition: &Partition, id: RegionId, truncation: f64, rng: &mut R) -> DVector<f64> {
    let shell = partition.shell(id.s2);
    let outer = shell.outer.min(truncation);
    let inner = shell.inner;
    if partition.n_x == 2 {
        let pair = &partition.cone(id.s1).pairs[0];
        loop {
            let mut t = rng.gen_range(pair.lo..=pair.hi);
            if rng.gen_bool(0.5) {
                t += PI;
            }
            let r = rng.gen_range(inner * inner..=outer * outer).sqrt();
            let x = DVector::from_vec(vec![r * t.cos(), r * t.sin()]);
            if partition.classify(&x) == id {
                return x;
            }
        }
    }
    let n = partition.n_x;
    for _ in 0..1_000_000 {
        let d = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let norm = d.norm();
        if norm == 0.0 || norm > 1.0 {
            continue;
        }
        let r = rng.gen_range(inner..=outer);
        let x = d * (r / norm);
        if partition.classify(&x) == id {
            return x;
        }
    }
    panic!("could not sample region {id}");
}
