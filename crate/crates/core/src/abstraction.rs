//! The quotient system: regions, step intervals, transitions and precision.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundsTable;
use crate::io::{fmt_f64, round_sig, to_stable_json};
use crate::partition::{Partition, RegionId};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("bounds table has no entry for region {0}")]
    MissingBounds(RegionId),
    #[error("transition {0} -> {1} refers to a region outside the partition")]
    UnknownRegion(RegionId, RegionId),
    #[error("region {0} has an empty step interval [{1}, {2}]")]
    EmptyInterval(RegionId, usize, usize),
    #[error("region {0} has no outgoing transition")]
    NoSuccessor(RegionId),
    #[error("malformed abstraction file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Run parameters carried alongside the graph. Floats are stored rounded to the
/// export precision so that exports re-import unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionMeta {
    pub config_hash: String,
    pub h: f64,
    pub sigma: f64,
    #[serde(rename = "W")]
    pub w_bound: f64,
    pub n_x: usize,
    pub q1: usize,
    pub q2: usize,
    pub radii: Vec<f64>,
    pub truncation_radius: Option<f64>,
    pub l_bar: usize,
    pub psi_scale: f64,
    /// "perturbed" when the lower ends come from the disturbance-aware bound.
    pub lower_bound: String,
    /// Smallest certified eigenvalue margin among the region lower bounds.
    pub min_solver_margin: Option<f64>,
    pub solver_unknown: usize,
    /// Transitions were not computed; every pair of regions is connected.
    pub complete_graph: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AbstractState {
    pub id: RegionId,
    /// Inclusive step interval of the next inter-event time.
    pub k_lo: usize,
    pub k_hi: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    pub meta: AbstractionMeta,
    /// Sorted by region id.
    pub states: Vec<AbstractState>,
    pub edges: BTreeSet<(RegionId, RegionId)>,
}

/// Assembles the quotient system; intervals are `[k_lower + 1, k_upper]`, using the
/// disturbance-aware lower bound when the disturbance bound is positive.
pub fn assemble(
    partition: &Partition,
    bounds: &BoundsTable,
    edges: BTreeSet<(RegionId, RegionId)>,
    mut meta: AbstractionMeta,
) -> Result<Abstraction, AbstractionError> {
    let mut states = Vec::with_capacity(partition.n_regions());
    for id in partition.region_ids() {
        let b = bounds.region(id).ok_or(AbstractionError::MissingBounds(id))?;
        let lower = if bounds.w_bound > 0.0 {
            b.k_lower_perturbed
        } else {
            b.k_lower_w0
        };
        states.push(AbstractState {
            id,
            k_lo: lower + 1,
            k_hi: b.k_upper_w0,
        });
    }
    meta.lower_bound = if bounds.w_bound > 0.0 { "perturbed" } else { "unperturbed" }.to_string();
    meta.l_bar = bounds.l_bar;
    meta.min_solver_margin = bounds
        .regions
        .iter()
        .filter_map(|r| r.margin)
        .reduce(f64::min);
    meta.solver_unknown = bounds.unknown_count();
    let abs = Abstraction {
        meta: normalize_meta(meta),
        states,
        edges,
    };
    abs.validate()?;
    Ok(abs)
}

fn normalize_meta(mut m: AbstractionMeta) -> AbstractionMeta {
    m.h = round_sig(m.h);
    m.sigma = round_sig(m.sigma);
    m.w_bound = round_sig(m.w_bound);
    m.psi_scale = round_sig(m.psi_scale);
    m.radii.iter_mut().for_each(|r| *r = round_sig(*r));
    m.truncation_radius = m.truncation_radius.map(round_sig);
    m.min_solver_margin = m.min_solver_margin.map(round_sig);
    m
}

/// Every pair of regions, used when transitions cannot be computed.
pub fn complete_edges(partition: &Partition) -> BTreeSet<(RegionId, RegionId)> {
    let ids: Vec<RegionId> = partition.region_ids().collect();
    ids.iter()
        .flat_map(|&a| ids.iter().map(move |&b| (a, b)))
        .collect()
}

impl Abstraction {
    pub fn validate(&self) -> Result<(), AbstractionError> {
        let ids: BTreeSet<RegionId> = self.states.iter().map(|s| s.id).collect();
        for s in &self.states {
            if s.k_lo < 1 || s.k_lo > s.k_hi {
                return Err(AbstractionError::EmptyInterval(s.id, s.k_lo, s.k_hi));
            }
        }
        for &(a, b) in &self.edges {
            if !ids.contains(&a) || !ids.contains(&b) {
                return Err(AbstractionError::UnknownRegion(a, b));
            }
        }
        for s in &self.states {
            if self.successors(s.id).next().is_none() {
                return Err(AbstractionError::NoSuccessor(s.id));
            }
        }
        Ok(())
    }

    pub fn state(&self, id: RegionId) -> Option<&AbstractState> {
        self.states
            .binary_search_by(|s| s.id.cmp(&id))
            .ok()
            .map(|i| &self.states[i])
    }

    pub fn successors(&self, id: RegionId) -> impl Iterator<Item = RegionId> + '_ {
        self.edges
            .range((id, RegionId::new(0, 0))..=(id, RegionId::new(usize::MAX, usize::MAX)))
            .map(|&(_, b)| b)
    }

    pub fn has_edge(&self, from: RegionId, to: RegionId) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Precision in seconds: `h * max (k_hi - k_lo)`.
    pub fn precision(&self) -> f64 {
        let widest = self.states.iter().map(|s| s.k_hi - s.k_lo).max().unwrap_or(0);
        self.meta.h * widest as f64
    }

    pub fn to_json(&self) -> String {
        to_stable_json(&self.to_file()).expect("abstraction serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AbstractionError> {
        let file: AbstractionFile = serde_json::from_str(text)?;
        let abs = Self {
            meta: file.meta,
            states: file
                .states
                .into_iter()
                .map(|s| AbstractState {
                    id: RegionId::new(s.id[0], s.id[1]),
                    k_lo: s.k_lo,
                    k_hi: s.k_hi,
                })
                .collect(),
            edges: file
                .edges
                .into_iter()
                .map(|[a, b]| (RegionId::new(a[0], a[1]), RegionId::new(b[0], b[1])))
                .collect(),
        };
        abs.validate()?;
        Ok(abs)
    }

    fn to_file(&self) -> AbstractionFile {
        let h = self.meta.h;
        AbstractionFile {
            meta: self.meta.clone(),
            states: self
                .states
                .iter()
                .map(|s| StateRecord {
                    id: [s.id.s1, s.id.s2],
                    k_lo: s.k_lo,
                    k_hi: s.k_hi,
                    lo_s: s.k_lo as f64 * h,
                    hi_s: s.k_hi as f64 * h,
                    maei_s: s.k_hi as f64 * h,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(a, b)| [[a.s1, a.s2], [b.s1, b.s2]])
                .collect(),
            epsilon_s: self.precision(),
        }
    }

    /// Graphviz digraph with nodes labelled `(s1,s2):[lo,hi]`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph petc_abstraction {\n");
        let _ = writeln!(
            out,
            "  graph [config_hash=\"{}\", epsilon_s=\"{}\", h=\"{}\"];",
            self.meta.config_hash,
            fmt_f64(self.precision()),
            fmt_f64(self.meta.h)
        );
        for s in &self.states {
            let _ = writeln!(out, "  \"{}\" [label=\"{}:[{},{}]\"];", s.id, s.id, s.k_lo, s.k_hi);
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "  \"{a}\" -> \"{b}\";");
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRecord {
    id: [usize; 2],
    k_lo: usize,
    k_hi: usize,
    lo_s: f64,
    hi_s: f64,
    maei_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AbstractionFile {
    meta: AbstractionMeta,
    states: Vec<StateRecord>,
    edges: Vec<[[usize; 2]; 2]>,
    epsilon_s: f64,
}
