//! State-space partition: isotropic covering by polyhedral double cones crossed
//! with concentric norm shells.
//!
//! Each cone is an intersection over consecutive coordinate pairs `(i, i+1)` of
//! double cones `x' Xi x >= 0`, where the 2x2 core of `Xi` encodes the angle
//! interval `[lo, hi)` of the projection `(x_i, x_{i+1})` modulo `pi`. Since `x`
//! and `-x` lie in the same cone, only angles in `[-pi/2, pi/2)` are enumerated.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("invalid angle interval [{lo}, {hi}]: need -pi/2 <= lo <= hi <= pi/2")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("shell radii must be positive, finite and strictly increasing: {0:?}")]
    InvalidRadii(Vec<f64>),
    #[error("expected {expected} shell radii for q2 = {q2}, got {got}")]
    RadiiCount { q2: usize, expected: usize, got: usize },
    #[error("partition needs q1 >= 1, q2 >= 1 and n_x >= 1")]
    EmptyPartition,
}

/// 1-based region label `(s1, s2)`; ordering is lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId {
    pub s1: usize,
    pub s2: usize,
}

impl RegionId {
    pub fn new(s1: usize, s2: usize) -> Self {
        Self { s1, s2 }
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.s1, self.s2)
    }
}

/// 2x2 cone matrix for the double cone spanned by angles `[lo, hi]`:
/// `x' Xi x = |x|^2 sin(phi - lo) sin(hi - phi)` for `x = |x| (cos phi, sin phi)`.
pub fn cone_matrix_2d(lo: f64, hi: f64) -> Result<Matrix2<f64>, PartitionError> {
    let tol = 1e-12;
    if !(lo >= -FRAC_PI_2 - tol && hi <= FRAC_PI_2 + tol && lo <= hi) {
        return Err(PartitionError::InvalidInterval { lo, hi });
    }
    let off = 0.5 * (lo + hi).sin();
    Ok(Matrix2::new(
        -lo.sin() * hi.sin(),
        off,
        off,
        -lo.cos() * hi.cos(),
    ))
}

/// Linear factors `(a, b)` with `x' Xi x = (a'x)(b'x)`; the nappe with both
/// factors nonnegative holds the angles `[lo, hi]`.
pub fn cone_factors(lo: f64, hi: f64) -> (Vector2<f64>, Vector2<f64>) {
    (
        Vector2::new(-lo.sin(), lo.cos()),
        Vector2::new(hi.sin(), -hi.cos()),
    )
}

/// Angle of the planar vector `(u, v)` folded into `[-pi/2, pi/2)`.
pub fn folded_angle(u: f64, v: f64) -> f64 {
    let mut a = v.atan2(u);
    if a >= FRAC_PI_2 {
        a -= PI;
    } else if a < -FRAC_PI_2 {
        a += PI;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCone {
    /// First coordinate of the pair (0-based), the pair being `(i, i+1)`.
    pub pair: usize,
    pub lo: f64,
    pub hi: f64,
    /// `n_x x n_x` lifted matrix, nonzero only on the pair's principal submatrix.
    pub xi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub s1: usize,
    /// Per-pair angle-interval index (0-based).
    pub digits: Vec<usize>,
    pub pairs: Vec<PairCone>,
}

impl ConeSpec {
    pub fn xi_matrices(&self, n_x: usize) -> Vec<DMatrix<f64>> {
        self.pairs
            .iter()
            .map(|p| {
                let flat: Vec<f64> = p.xi.iter().flatten().copied().collect();
                DMatrix::from_row_slice(n_x, n_x, &flat)
            })
            .collect()
    }

    /// `x' Xi_{(i,i+1)} x >= 0` for every pair.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.pairs.iter().all(|p| pair_value(p, x) >= 0.0)
    }
}

fn pair_value(p: &PairCone, x: &DVector<f64>) -> f64 {
    let i = p.pair;
    let u = x[i];
    let v = x[i + 1];
    let core = [[p.xi[i][i], p.xi[i][i + 1]], [p.xi[i + 1][i], p.xi[i + 1][i + 1]]];
    core[0][0] * u * u + (core[0][1] + core[1][0]) * u * v + core[1][1] * v * v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub s2: usize,
    pub inner: f64,
    /// `+inf` for the outermost shell.
    #[serde(with = "crate::io::inf_f64")]
    pub outer: f64,
}

impl ShellSpec {
    pub fn contains_norm(&self, r: f64) -> bool {
        self.inner <= r && r < self.outer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
}

/// How shell radii `W_1 < ... < W_{q2-1}` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellRadii {
    Explicit(Vec<f64>),
    /// Geometric spacing from `inner = W_1` to `outer = W_{q2-1}`.
    Geometric { inner: f64, outer: f64 },
}

impl ShellRadii {
    pub fn resolve(&self, q2: usize) -> Result<Vec<f64>, PartitionError> {
        let count = q2.saturating_sub(1);
        let radii = match self {
            ShellRadii::Explicit(v) => {
                if v.len() != count {
                    return Err(PartitionError::RadiiCount {
                        q2,
                        expected: count,
                        got: v.len(),
                    });
                }
                v.clone()
            }
            ShellRadii::Geometric { inner, outer } => match count {
                0 => Vec::new(),
                1 => vec![*inner],
                _ => {
                    let ratio = outer / inner;
                    (0..count)
                        .map(|i| inner * ratio.powf(i as f64 / (count - 1) as f64))
                        .collect()
                }
            },
        };
        let ok = radii.iter().all(|r| r.is_finite() && *r > 0.0)
            && radii.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(PartitionError::InvalidRadii(radii));
        }
        Ok(radii)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub n_x: usize,
    pub q1: usize,
    pub q2: usize,
    /// `W_1 .. W_{q2-1}`.
    pub radii: Vec<f64>,
    pub cones: Vec<ConeSpec>,
    pub shells: Vec<ShellSpec>,
    pub regions: Vec<Region>,
}

pub fn build_partition(
    n_x: usize,
    q1: usize,
    q2: usize,
    radii: &ShellRadii,
) -> Result<Partition, PartitionError> {
    if n_x == 0 || q1 == 0 || q2 == 0 {
        return Err(PartitionError::EmptyPartition);
    }
    let radii = radii.resolve(q2)?;
    let n_pairs = n_x - 1;
    let width = PI / q1 as f64;
    let intervals: Vec<(f64, f64)> = (0..q1)
        .map(|j| {
            let lo = -FRAC_PI_2 + j as f64 * width;
            let hi = if j + 1 == q1 {
                FRAC_PI_2
            } else {
                -FRAC_PI_2 + (j + 1) as f64 * width
            };
            (lo, hi)
        })
        .collect();

    let n_cones = q1.pow(n_pairs as u32);
    let mut cones = Vec::with_capacity(n_cones);
    for idx in 0..n_cones {
        // first pair is the most significant digit
        let mut digits = vec![0; n_pairs];
        let mut rest = idx;
        for d in (0..n_pairs).rev() {
            digits[d] = rest % q1;
            rest /= q1;
        }
        let pairs = digits
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let (lo, hi) = intervals[j];
                let core = cone_matrix_2d(lo, hi)?;
                let mut xi = vec![vec![0.0; n_x]; n_x];
                xi[i][i] = core[(0, 0)];
                xi[i][i + 1] = core[(0, 1)];
                xi[i + 1][i] = core[(1, 0)];
                xi[i + 1][i + 1] = core[(1, 1)];
                Ok(PairCone { pair: i, lo, hi, xi })
            })
            .collect::<Result<Vec<_>, PartitionError>>()?;
        cones.push(ConeSpec {
            s1: idx + 1,
            digits,
            pairs,
        });
    }

    let shells = (0..q2)
        .map(|j| ShellSpec {
            s2: j + 1,
            inner: if j == 0 { 0.0 } else { radii[j - 1] },
            outer: if j + 1 == q2 { f64::INFINITY } else { radii[j] },
        })
        .collect::<Vec<_>>();

    let mut regions = Vec::with_capacity(n_cones * q2);
    for c in &cones {
        for s in &shells {
            regions.push(Region {
                id: RegionId::new(c.s1, s.s2),
            });
        }
    }
    Ok(Partition {
        n_x,
        q1,
        q2,
        radii,
        cones,
        shells,
        regions,
    })
}

impl Partition {
    pub fn cone(&self, s1: usize) -> &ConeSpec {
        &self.cones[s1 - 1]
    }

    pub fn shell(&self, s2: usize) -> &ShellSpec {
        &self.shells[s2 - 1]
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn region_index(&self, id: RegionId) -> usize {
        (id.s1 - 1) * self.q2 + (id.s2 - 1)
    }

    pub fn region_ids(&self) -> impl Iterator<Item = RegionId> + '_ {
        self.regions.iter().map(|r| r.id)
    }

    /// Shell index of a norm under the half-open convention `W_{s2-1} <= r < W_{s2}`.
    pub fn shell_of_norm(&self, r: f64) -> usize {
        self.radii.iter().take_while(|w| r >= **w).count() + 1
    }

    /// Cone interval index for one coordinate pair. A point on a shared boundary
    /// lies in both neighbouring closed cones; the smaller index wins.
    fn pair_digit(&self, u: f64, v: f64) -> usize {
        if u == 0.0 && v == 0.0 {
            return 0;
        }
        let angle = folded_angle(u, v);
        let width = PI / self.q1 as f64;
        let guess = (((angle + FRAC_PI_2) / width).floor() as usize).min(self.q1 - 1);
        let lo = guess.saturating_sub(1);
        let hi = (guess + 1).min(self.q1 - 1);
        for j in lo..=hi {
            let lo_a = -FRAC_PI_2 + j as f64 * width;
            let hi_a = if j + 1 == self.q1 {
                FRAC_PI_2
            } else {
                -FRAC_PI_2 + (j + 1) as f64 * width
            };
            let (a, b) = cone_factors(lo_a, hi_a);
            let x = Vector2::new(u, v);
            if a.dot(&x) * b.dot(&x) >= 0.0 {
                return j;
            }
        }
        guess
    }

    /// Cone label `s1` of a state.
    pub fn classify_cone(&self, x: &DVector<f64>) -> usize {
        assert_eq!(x.len(), self.n_x, "state dimension");
        let mut idx = 0;
        for i in 0..self.n_x - 1 {
            idx = idx * self.q1 + self.pair_digit(x[i], x[i + 1]);
        }
        idx + 1
    }

    pub fn classify(&self, x: &DVector<f64>) -> RegionId {
        RegionId::new(self.classify_cone(x), self.shell_of_norm(x.norm()))
    }

    /// Direct membership test from the defining quadratic and norm inequalities.
    pub fn contains(&self, id: RegionId, x: &DVector<f64>) -> bool {
        self.cone(id.s1).contains(x) && self.shell(id.s2).contains_norm(x.norm())
    }
}
