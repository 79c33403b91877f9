//! Regional inter-event-time bounds from LMI feasibility.
//!
//! Step counts follow one convention throughout: a lower bound `k_lo` means the
//! next event happens no earlier than `k_lo + 1` samples after the last one, an
//! upper bound `k_hi` means it happens no later than `k_hi` samples after it.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{LiftedDynamics, SpectralData};
use crate::linalg::sym_eig_min;
use crate::partition::{Partition, RegionId};
use crate::sdp::{sdp_feasible, FeasibilityProblem, Outcome, SdpSettings, Sense};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error(
        "Phi1(k) is not positive definite for any k <= {cap}; raise the step cap or check \
         that the sampled loop has bounded inter-event times"
    )]
    CapReached { cap: usize },
}

/// Outcome of a monotone step search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSearch {
    pub k: usize,
    /// Eigenvalue margin of the last certified LMI (`None` if none was needed).
    pub margin: Option<f64>,
    /// Number of LMIs the solver left undecided.
    pub unknown: usize,
}

fn run(problem: &FeasibilityProblem, sdp: &SdpSettings, unknown: &mut usize) -> Option<f64> {
    match sdp_feasible(problem, sdp) {
        Outcome::Feasible(c) => Some(c.margin),
        Outcome::Infeasible { .. } => None,
        Outcome::Unknown { .. } => {
            *unknown += 1;
            None
        }
    }
}

/// Smallest `l_bar >= 1` with `Phi1(l_bar) >= delta I`, searched up to the cache length.
pub fn global_upper_bound(dynamics: &LiftedDynamics, sdp: &SdpSettings) -> Result<usize, BoundsError> {
    let cap = dynamics.k_max();
    for k in 1..=cap {
        let phi1 = dynamics.phi1(k);
        let delta = sdp.margin * phi1.norm().max(1.0);
        if sym_eig_min(&phi1) >= delta {
            return Ok(k);
        }
    }
    Err(BoundsError::CapReached { cap })
}

/// Largest `k_lo <= k_max` with `Phi1(k) + sum e_i Xi_i <= 0` feasible for every `k <= k_lo`.
pub fn regional_lower_bound_w0(
    dynamics: &LiftedDynamics,
    xi: &[DMatrix<f64>],
    k_max: usize,
    sdp: &SdpSettings,
) -> StepSearch {
    let mut unknown = 0;
    let mut margin = None;
    let mut k_lo = 0;
    for k in 0..=k_max.min(dynamics.k_max()) {
        let problem = FeasibilityProblem::new(dynamics.phi1(k), xi.to_vec(), Sense::NegSemidefinite);
        match run(&problem, sdp, &mut unknown) {
            Some(m) => {
                k_lo = k;
                margin = Some(m);
            }
            None => break,
        }
    }
    StepSearch {
        k: k_lo,
        margin,
        unknown,
    }
}

/// Lower bound under disturbances with sup-norm at most `w_bound`, for a region whose
/// shell starts at `shell_inner`.
///
/// Without disturbance input the decoupling block is unnecessary and the search
/// coincides with [`regional_lower_bound_w0`]. Innermost shells (`shell_inner = 0`)
/// get the trivial bound of one sample.
pub fn regional_lower_bound(
    dynamics: &LiftedDynamics,
    spec: &SpectralData,
    xi: &[DMatrix<f64>],
    shell_inner: f64,
    w_bound: f64,
    k_max: usize,
    sdp: &SdpSettings,
) -> StepSearch {
    if w_bound * spec.lam_e == 0.0 {
        return regional_lower_bound_w0(dynamics, xi, k_max, sdp);
    }
    if shell_inner <= 0.0 {
        return StepSearch {
            k: 0,
            margin: None,
            unknown: 0,
        };
    }
    let nx = dynamics.system().n_x();
    let lifted_xi: Vec<DMatrix<f64>> = xi
        .iter()
        .map(|m| {
            let mut big = DMatrix::zeros(2 * nx, 2 * nx);
            big.view_mut((0, 0), (nx, nx)).copy_from(m);
            big
        })
        .collect();
    let ratio = (w_bound / shell_inner).powi(2);
    let mut unknown = 0;
    let mut margin = None;
    let mut k_lo = 0;
    for k in 0..=k_max.min(dynamics.k_max()) {
        let phi = dynamics.phi_matrices(spec, k);
        let mut constant = DMatrix::zeros(2 * nx, 2 * nx);
        let mut h = phi.phi1.clone();
        for i in 0..nx {
            h[(i, i)] += phi.phi3 * ratio;
        }
        constant.view_mut((0, 0), (nx, nx)).copy_from(&h);
        constant.view_mut((0, nx), (nx, nx)).copy_from(&phi.phi2);
        constant
            .view_mut((nx, 0), (nx, nx))
            .copy_from(&phi.phi2.transpose());
        constant.view_mut((nx, nx), (nx, nx)).copy_from(&(-&spec.psi));
        let problem = FeasibilityProblem::new(constant, lifted_xi.clone(), Sense::NegSemidefinite);
        match run(&problem, sdp, &mut unknown) {
            Some(m) => {
                k_lo = k;
                margin = Some(m);
            }
            None => break,
        }
    }
    StepSearch {
        k: k_lo,
        margin,
        unknown,
    }
}

/// Smallest `k_hi` in `(k_lower, l_bar]` such that `Phi1(k) - sum e_i Xi_i > 0` is feasible
/// for every `k` in `[k_hi, l_bar]`, searched downwards from `l_bar`.
pub fn regional_upper_bound_w0(
    dynamics: &LiftedDynamics,
    xi: &[DMatrix<f64>],
    l_bar: usize,
    k_lower: usize,
    sdp: &SdpSettings,
) -> StepSearch {
    let negated: Vec<DMatrix<f64>> = xi.iter().map(|m| -m).collect();
    let mut unknown = 0;
    let mut margin = None;
    let mut k_hi = l_bar;
    let floor = (k_lower + 1).min(l_bar);
    let mut k = l_bar;
    loop {
        let problem = FeasibilityProblem::new(dynamics.phi1(k), negated.clone(), Sense::PosDefinite);
        match run(&problem, sdp, &mut unknown) {
            Some(m) => {
                k_hi = k;
                margin = Some(m);
            }
            None => break,
        }
        if k == floor {
            break;
        }
        k -= 1;
    }
    StepSearch {
        k: k_hi,
        margin,
        unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBounds {
    pub s1: usize,
    pub k_lower_w0: usize,
    /// MAEI in steps.
    pub k_upper_w0: usize,
    pub lower_margin: Option<f64>,
    pub upper_margin: Option<f64>,
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub region: RegionId,
    pub k_lower_perturbed: usize,
    pub k_lower_w0: usize,
    pub k_upper_w0: usize,
    pub l_bar: usize,
    pub margin: Option<f64>,
    pub unknown: usize,
}

impl RegionBounds {
    /// Lower end of the output interval in steps, `k_lo + 1`.
    pub fn min_steps(&self) -> usize {
        self.k_lower_perturbed + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsTable {
    pub config_hash: String,
    pub h: f64,
    pub w_bound: f64,
    pub l_bar: usize,
    pub psi_scale: f64,
    pub mu: f64,
    pub cones: Vec<ConeBounds>,
    pub regions: Vec<RegionBounds>,
}

impl BoundsTable {
    pub fn cone(&self, s1: usize) -> &ConeBounds {
        &self.cones[s1 - 1]
    }

    /// MAEI of a cone in steps.
    pub fn maei_steps(&self, s1: usize) -> usize {
        self.cone(s1).k_upper_w0
    }

    pub fn maei_table(&self) -> Vec<usize> {
        self.cones.iter().map(|c| c.k_upper_w0).collect()
    }

    pub fn region(&self, id: RegionId) -> Option<&RegionBounds> {
        self.regions
            .binary_search_by(|r| r.region.cmp(&id))
            .ok()
            .map(|i| &self.regions[i])
    }

    pub fn unknown_count(&self) -> usize {
        self.cones.iter().map(|c| c.unknown).sum::<usize>()
            + self.regions.iter().map(|r| r.unknown).sum::<usize>()
    }

    /// Delimited text: one line per region.
    pub fn to_csv(&self) -> String {
        use crate::io::fmt_f64;
        let mut out = format!(
            "# config_hash={} l_bar={} h={}\n",
            self.config_hash,
            self.l_bar,
            fmt_f64(self.h)
        );
        out.push_str("s1,s2,k_lower_perturbed,k_lower_w0,k_upper_w0,maei_s,l_bar,margin\n");
        for r in &self.regions {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.region.s1,
                r.region.s2,
                r.k_lower_perturbed,
                r.k_lower_w0,
                r.k_upper_w0,
                fmt_f64(r.k_upper_w0 as f64 * self.h),
                r.l_bar,
                r.margin.map(fmt_f64).unwrap_or_default()
            ));
        }
        out
    }
}

/// Computes every cone and region bound; parallel over cones and regions, with
/// results kept in region order.
pub fn compute_bounds(
    partition: &Partition,
    dynamics: &LiftedDynamics,
    spec: &SpectralData,
    psi_scale: f64,
    sdp: &SdpSettings,
) -> Result<BoundsTable, BoundsError> {
    let l_bar = global_upper_bound(dynamics, sdp)?;
    let sys = dynamics.system();
    let n_x = sys.n_x();
    let w_bound = sys.params.w_bound;

    let cones: Vec<ConeBounds> = partition
        .cones
        .par_iter()
        .map(|cone| {
            let xi = cone.xi_matrices(n_x);
            let lower = regional_lower_bound_w0(dynamics, &xi, l_bar, sdp);
            let upper = regional_upper_bound_w0(dynamics, &xi, l_bar, lower.k, sdp);
            ConeBounds {
                s1: cone.s1,
                k_lower_w0: lower.k,
                k_upper_w0: upper.k,
                lower_margin: lower.margin,
                upper_margin: upper.margin,
                unknown: lower.unknown + upper.unknown,
            }
        })
        .collect();

    let regions: Vec<RegionBounds> = partition
        .regions
        .par_iter()
        .map(|region| {
            let id = region.id;
            let cone = &cones[id.s1 - 1];
            let xi = partition.cone(id.s1).xi_matrices(n_x);
            let shell = partition.shell(id.s2);
            let search = regional_lower_bound(
                dynamics,
                spec,
                &xi,
                shell.inner,
                w_bound,
                cone.k_lower_w0,
                sdp,
            );
            RegionBounds {
                region: id,
                // feasibility of the perturbed LMI implies the unperturbed one
                k_lower_perturbed: search.k.min(cone.k_lower_w0),
                k_lower_w0: cone.k_lower_w0,
                k_upper_w0: cone.k_upper_w0,
                l_bar,
                margin: search.margin,
                unknown: search.unknown,
            }
        })
        .collect();

    Ok(BoundsTable {
        config_hash: String::new(),
        h: sys.h(),
        w_bound,
        l_bar,
        psi_scale,
        mu: spec.mu,
        cones,
        regions,
    })
}
