//! Flow pipes over the inter-event interval and the induced transition relation.
//!
//! Regions are double cones (symmetric under `x -> -x`) and the dynamics are
//! linear, so a pipe stores the image of one nappe only; membership of `x` is
//! tested for `x` and `-x`. Implemented for planar state spaces.

use nalgebra::{DVector, Matrix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::RegionBounds;
use crate::dynamics::LiftedDynamics;
use crate::geometry::{norm, Halfspace, Point, Polytope};
use crate::partition::{cone_factors, Partition, RegionId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("reachability is implemented for 2 states, got {0}")]
    UnsupportedDimension(usize),
    #[error("region {0} is unbounded and no truncation radius is configured")]
    Unbounded(RegionId),
    #[error("truncation radius {trunc} must exceed the last finite shell radius {last}")]
    BadTruncation { trunc: f64, last: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSettings {
    /// Secant cuts used on the outer arc of a region.
    pub arc_segments: usize,
    /// Sides of the polygon circumscribing the disturbance ball in intersection tests.
    pub ball_sides: usize,
    /// Outer radius used for the unbounded shell; `None` means "10 x last finite radius".
    pub truncation_radius: Option<f64>,
}

impl Default for ReachSettings {
    fn default() -> Self {
        Self {
            arc_segments: 8,
            ball_sides: 32,
            truncation_radius: None,
        }
    }
}

impl ReachSettings {
    /// Resolved truncation radius for a partition.
    pub fn truncation_for(&self, partition: &Partition) -> Result<f64, ReachError> {
        let last = partition.radii.last().copied().unwrap_or(0.0);
        let trunc = match self.truncation_radius {
            Some(t) => t,
            None if last > 0.0 => 10.0 * last,
            None => 1.0,
        };
        if !(trunc > last) || !trunc.is_finite() {
            return Err(ReachError::BadTruncation { trunc, last });
        }
        Ok(trunc)
    }
}

fn check_dim(n_x: usize) -> Result<(), ReachError> {
    if n_x == 2 {
        Ok(())
    } else {
        Err(ReachError::UnsupportedDimension(n_x))
    }
}

/// Polygon containing the nappe `lo <= angle <= hi` of a region, with the outer
/// arc covered by `arc_segments` tangent cuts. The unbounded shell is cut at
/// `truncation`.
pub fn overapprox_region(
    partition: &Partition,
    id: RegionId,
    arc_segments: usize,
    truncation: Option<f64>,
) -> Result<Polytope, ReachError> {
    check_dim(partition.n_x)?;
    let pair = &partition.cone(id.s1).pairs[0];
    let shell = partition.shell(id.s2);
    let outer = if shell.outer.is_finite() {
        shell.outer
    } else {
        truncation.ok_or(ReachError::Unbounded(id))?
    };
    let m = arc_segments.max(1);
    let step = (pair.hi - pair.lo) / m as f64;
    let rho = outer / (0.5 * step).cos();
    let mut pts: Vec<Point> = Vec::with_capacity(m + 3);
    for j in 0..=m {
        let t = pair.lo + j as f64 * step;
        pts.push([rho * t.cos(), rho * t.sin()]);
    }
    let w = shell.inner;
    pts.push([w * pair.lo.cos(), w * pair.lo.sin()]);
    pts.push([w * pair.hi.cos(), w * pair.hi.sin()]);
    Ok(Polytope::from_points(&pts))
}

pub fn to_matrix2(m: &nalgebra::DMatrix<f64>) -> Matrix2<f64> {
    assert_eq!(m.shape(), (2, 2), "planar map expected");
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

pub fn map_polytope(m: &Matrix2<f64>, p: &Polytope) -> Polytope {
    p.map(m)
}

/// `P ⊕ ball(r)`, kept exact: membership is "distance to P at most r".
#[derive(Debug, Clone, PartialEq)]
pub struct MinkowskiBall {
    pub polytope: Polytope,
    pub radius: f64,
}

impl MinkowskiBall {
    pub fn contains(&self, x: Point, tol: f64) -> bool {
        self.polytope.distance(x) <= self.radius + tol
    }

    /// Polygon containing the set, see [`Polytope::dilate_outer`].
    pub fn outer_polytope(&self, sides: usize) -> Polytope {
        self.polytope.dilate_outer(self.radius, sides)
    }
}

pub fn minkowski_ball(p: &Polytope, r: f64) -> MinkowskiBall {
    assert!(r >= 0.0, "ball radius must be nonnegative");
    MinkowskiBall {
        polytope: p.clone(),
        radius: r,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSlice {
    pub k: usize,
    pub vertices: Vec<Point>,
    pub ball_radius: f64,
}

impl ReachSlice {
    fn set(&self) -> MinkowskiBall {
        minkowski_ball(&Polytope::from_points(&self.vertices), self.ball_radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPipe {
    pub region: RegionId,
    /// Outer radius used for the initial set (differs from the shell for the unbounded one).
    pub initial_outer_radius: f64,
    pub truncated: bool,
    pub slices: Vec<ReachSlice>,
}

fn rel_tol(x: Point) -> f64 {
    1e-9 * (1.0 + norm(x))
}

impl FlowPipe {
    pub fn slice(&self, k: usize) -> Option<&ReachSlice> {
        let first = self.slices.first()?.k;
        self.slices.get(k.checked_sub(first)?)
    }

    /// Whether `x` (or `-x`) lies in slice `k`.
    pub fn contains_at(&self, k: usize, x: &DVector<f64>) -> bool {
        let Some(slice) = self.slice(k) else {
            return false;
        };
        let p = [x[0], x[1]];
        let set = slice.set();
        set.contains(p, rel_tol(p)) || set.contains([-p[0], -p[1]], rel_tol(p))
    }

    /// Whether `x` lies in any slice.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.slices.iter().any(|s| self.contains_at(s.k, x))
    }
}

/// All pipes of one run, as exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPipeSet {
    pub config_hash: String,
    pub truncation_radius: f64,
    pub arc_segments: usize,
    pub ball_sides: usize,
    pub pipes: Vec<FlowPipe>,
}

/// One slice per `k` in `[k_lower_perturbed, k_upper_w0]`, each the image of the
/// initial polygon under `M(k)` plus a ball of radius `theta_radius(k)`.
pub fn build_flow_pipe(
    dynamics: &LiftedDynamics,
    partition: &Partition,
    bounds: &RegionBounds,
    settings: &ReachSettings,
) -> Result<FlowPipe, ReachError> {
    check_dim(partition.n_x)?;
    let id = bounds.region;
    let trunc = settings.truncation_for(partition)?;
    let shell = partition.shell(id.s2);
    let truncated = !shell.outer.is_finite();
    let x0 = overapprox_region(partition, id, settings.arc_segments, Some(trunc))?;
    let slices = (bounds.k_lower_perturbed..=bounds.k_upper_w0)
        .map(|k| {
            let image = map_polytope(&to_matrix2(dynamics.m(k)), &x0);
            ReachSlice {
                k,
                vertices: image.vertices().to_vec(),
                ball_radius: dynamics.theta_radius(k),
            }
        })
        .collect();
    Ok(FlowPipe {
        region: id,
        initial_outer_radius: if truncated { trunc } else { shell.outer },
        truncated,
        slices,
    })
}

/// Conservative test of `poly ∩ target ≠ ∅`: the target cone is split into its two
/// polyhedral nappes, the outer radius is checked through the minimum norm and the
/// inner radius through the maximum vertex norm of each clipped piece.
pub fn intersects(poly: &Polytope, partition: &Partition, target: RegionId) -> bool {
    if poly.is_empty() {
        return false;
    }
    let pair = &partition.cone(target.s1).pairs[0];
    let shell = partition.shell(target.s2);
    let (a, b) = cone_factors(pair.lo, pair.hi);
    let scale = poly.max_norm().max(1.0);
    let tol = 1e-9 * scale;
    for sign in [1.0, -1.0] {
        // nappe: sign * a.x >= 0 and sign * b.x >= 0
        let mut piece = poly.clone();
        for f in [a, b] {
            piece = piece.clip(&Halfspace::new([-sign * f[0], -sign * f[1]], tol));
            if piece.is_empty() {
                break;
            }
        }
        if piece.is_empty() {
            continue;
        }
        let near = piece.min_norm() <= shell.outer + tol;
        let far = piece.max_norm() >= shell.inner - tol;
        if near && far {
            return true;
        }
    }
    false
}

/// Successor regions of a pipe, in region order.
pub fn successors(pipe: &FlowPipe, partition: &Partition, settings: &ReachSettings) -> Vec<RegionId> {
    let outers: Vec<Polytope> = pipe
        .slices
        .iter()
        .map(|s| s.set().outer_polytope(settings.ball_sides))
        .collect();
    partition
        .region_ids()
        .filter(|&t| outers.iter().any(|p| intersects(p, partition, t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{build_partition, ShellRadii};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn region_polygon_contains_samples() {
        let part = build_partition(2, 4, 3, &ShellRadii::Explicit(vec![1.0, 2.0])).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for id in part.region_ids() {
            let poly = overapprox_region(&part, id, 8, Some(20.0)).unwrap();
            let pair = &part.cone(id.s1).pairs[0];
            let shell = part.shell(id.s2);
            let outer = shell.outer.min(20.0);
            for _ in 0..2000 {
                let t = rng.gen_range(pair.lo..=pair.hi);
                let r = rng.gen_range(shell.inner..=outer);
                let p = [r * t.cos(), r * t.sin()];
                assert!(poly.contains(p, 1e-12), "{id} {p:?}");
            }
        }
    }

    #[test]
    fn unbounded_shell_needs_truncation() {
        let part = build_partition(2, 4, 2, &ShellRadii::Explicit(vec![1.0])).unwrap();
        assert_eq!(
            overapprox_region(&part, RegionId::new(1, 2), 8, None),
            Err(ReachError::Unbounded(RegionId::new(1, 2)))
        );
    }

    #[test]
    fn map_identity_and_scaling() {
        let sq = Polytope::from_points(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(map_polytope(&Matrix2::identity(), &sq), sq);
        let doubled = map_polytope(&(Matrix2::identity() * 2.0), &sq);
        let mut v = doubled.vertices().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(v, vec![[0.0, 0.0], [0.0, 2.0], [2.0, 0.0], [2.0, 2.0]]);
    }

    #[test]
    fn minkowski_membership() {
        let sq = Polytope::from_points(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(minkowski_ball(&sq, 0.0).polytope, sq);
        let ball = minkowski_ball(&sq, 1.0);
        let c = 1.0 + 0.5f64.sqrt();
        assert!(ball.contains([c, c], 1e-12));
        assert!(!ball.contains([2.1, 2.1], 0.0));
    }

    #[test]
    fn self_and_opposite_intersections() {
        let part = build_partition(2, 4, 3, &ShellRadii::Explicit(vec![1.0, 2.0])).unwrap();
        for id in part.region_ids() {
            let poly = overapprox_region(&part, id, 8, Some(20.0)).unwrap();
            assert!(intersects(&poly, &part, id));
        }
        // a thin sector near angle 0 in the outer annulus misses the cone around pi/2
        let t: f64 = 0.05;
        let sector = Polytope::from_points(&[
            [5.0 * (-t).cos(), 5.0 * (-t).sin()],
            [5.0 * t.cos(), 5.0 * t.sin()],
            [6.0, -0.3],
            [6.0, 0.3],
        ]);
        let vertical = part.classify(&DVector::from_vec(vec![0.0, 1.5]));
        assert!(!intersects(&sector, &part, vertical));
        // and it never reaches the innermost shell
        let inner = part.classify(&DVector::from_vec(vec![0.5 * (PI / 100.0).cos(), 0.0]));
        assert!(!intersects(&sector, &part, inner));
    }
}
