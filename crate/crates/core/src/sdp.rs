//! Feasibility of small affine LMIs in nonnegative scalar multipliers.
//!
//! A problem `F(e) = F0 + sum_i e_i F_i` with `e >= 0` is decided by minimizing
//! the convex function `f(e) = lambda_max(F(e))` (or `lambda_max(-F(e))` for the
//! positive-definite sense) over a box `[0, cap]^m` with the ellipsoid method.
//! Every iterate carries a valid lower bound on the minimum, so the method
//! either exhibits a certificate, proves infeasibility within the box, or
//! stops undecided.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{sym_top_eigenpair, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `F(e) <= 0` (negative semidefinite).
    NegSemidefinite,
    /// `F(e) > 0`, certified as `F(e) >= delta I`.
    PosDefinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProblem {
    pub constant: DMatrix<f64>,
    pub multipliers: Vec<DMatrix<f64>>,
    pub sense: Sense,
}

impl FeasibilityProblem {
    pub fn new(constant: DMatrix<f64>, multipliers: Vec<DMatrix<f64>>, sense: Sense) -> Self {
        let n = constant.nrows();
        assert_eq!(constant.ncols(), n, "constant block must be square");
        assert!(
            multipliers.iter().all(|m| m.shape() == (n, n)),
            "multiplier matrices must match the constant block"
        );
        Self {
            constant: symmetrize(&constant),
            multipliers: multipliers.iter().map(symmetrize).collect(),
            sense,
        }
    }

    /// `F(e)`.
    pub fn evaluate(&self, e: &[f64]) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (m, v) in self.multipliers.iter().zip(e) {
            f += m * *v;
        }
        f
    }

    fn oriented(&self) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        match self.sense {
            Sense::NegSemidefinite => (self.constant.clone(), self.multipliers.clone()),
            Sense::PosDefinite => (
                -&self.constant,
                self.multipliers.iter().map(|m| -m).collect(),
            ),
        }
    }

    fn scale(&self) -> f64 {
        self.constant.norm().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpSettings {
    /// Relative eigenvalue margin for strict inequalities.
    pub margin: f64,
    pub max_iterations: usize,
    /// Multipliers are searched in `[0, multiplier_cap * |F0| / min |F_i|]`.
    pub multiplier_cap: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            margin: 1e-8,
            max_iterations: 4000,
            multiplier_cap: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub multipliers: Vec<f64>,
    /// Worst eigenvalue in the requested direction: `lambda_max(F)` for `<= 0`,
    /// `lambda_min(F)` for `> 0`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Outcome {
    Feasible(Certificate),
    /// No point in the search box satisfies the inequality; `gap` is a lower bound
    /// on how far the best point misses it.
    Infeasible { gap: f64 },
    /// Iteration budget exhausted without a decision.
    Unknown { best: f64, lower: f64 },
}

impl Outcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::Feasible(_))
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Outcome::Feasible(c) => Some(c),
            _ => None,
        }
    }
}

struct Oracle {
    g0: DMatrix<f64>,
    gs: Vec<DMatrix<f64>>,
}

impl Oracle {
    /// `(lambda_max(G(e)), subgradient)`.
    fn eval(&self, e: &[f64]) -> (f64, Vec<f64>) {
        let mut g = self.g0.clone();
        for (m, v) in self.gs.iter().zip(e) {
            g += m * *v;
        }
        let (val, vec) = sym_top_eigenpair(&g);
        let grad = self
            .gs
            .iter()
            .map(|m| (vec.transpose() * m * &vec)[(0, 0)])
            .collect();
        (val, grad)
    }
}

/// Decides `F(e) <= 0` / `F(e) > 0` for some `e >= 0`.
pub fn sdp_feasible(prob: &FeasibilityProblem, settings: &SdpSettings) -> Outcome {
    let (g0, gs) = prob.oriented();
    let target = match prob.sense {
        Sense::NegSemidefinite => 0.0,
        Sense::PosDefinite => -settings.margin * prob.scale(),
    };
    let oracle = Oracle { g0, gs };
    let report = |e: Vec<f64>, val: f64| {
        let margin = match prob.sense {
            Sense::NegSemidefinite => val,
            Sense::PosDefinite => -val,
        };
        Outcome::Feasible(Certificate {
            multipliers: e,
            margin,
        })
    };

    let m = oracle.gs.len();
    let (val0, _) = oracle.eval(&vec![0.0; m]);
    if val0 <= target {
        return report(vec![0.0; m], val0);
    }
    if m == 0 {
        return Outcome::Infeasible { gap: val0 - target };
    }

    let min_norm = oracle
        .gs
        .iter()
        .map(|g| g.norm())
        .fold(f64::INFINITY, f64::min);
    if min_norm == 0.0 {
        // a zero multiplier matrix cannot help; drop to the remaining ones
        let keep: Vec<DMatrix<f64>> = prob
            .multipliers
            .iter()
            .filter(|g| g.norm() > 0.0)
            .cloned()
            .collect();
        let idx: Vec<usize> = (0..m).filter(|&i| prob.multipliers[i].norm() > 0.0).collect();
        let reduced = FeasibilityProblem {
            constant: prob.constant.clone(),
            multipliers: keep,
            sense: prob.sense,
        };
        return match sdp_feasible(&reduced, settings) {
            Outcome::Feasible(c) => {
                let mut full = vec![0.0; m];
                for (k, &i) in idx.iter().enumerate() {
                    full[i] = c.multipliers[k];
                }
                Outcome::Feasible(Certificate {
                    multipliers: full,
                    margin: c.margin,
                })
            }
            other => other,
        };
    }
    let cap = settings.multiplier_cap * prob.scale() / min_norm;
    let tol = 1e-13 * prob.scale();

    let mut best = val0;
    let mut lower = f64::NEG_INFINITY;

    if m == 1 {
        let (mut lo, mut hi) = (0.0, cap);
        for _ in 0..settings.max_iterations {
            let mid = 0.5 * (lo + hi);
            let (val, grad) = oracle.eval(&[mid]);
            if val <= target {
                return report(vec![mid], val);
            }
            best = best.min(val);
            let g = grad[0];
            lower = lower.max(val - g.abs() * 0.5 * (hi - lo));
            if lower > target {
                return Outcome::Infeasible {
                    gap: lower - target,
                };
            }
            if best - lower <= tol {
                break;
            }
            if g > 0.0 {
                hi = mid;
            } else if g < 0.0 {
                lo = mid;
            } else {
                // mid minimizes f over the box
                return Outcome::Infeasible { gap: val - target };
            }
        }
        return Outcome::Unknown { best, lower };
    }

    let mf = m as f64;
    let mut center = DVector::from_element(m, 0.5 * cap);
    let mut shape = DMatrix::identity(m, m) * (mf * 0.25 * cap * cap);
    for _ in 0..settings.max_iterations {
        let c: Vec<f64> = center.iter().copied().collect();
        let cut = if let Some(i) = c.iter().position(|v| *v < 0.0) {
            let mut g = DVector::zeros(m);
            g[i] = -1.0;
            g
        } else if let Some(i) = c.iter().position(|v| *v > cap) {
            let mut g = DVector::zeros(m);
            g[i] = 1.0;
            g
        } else {
            let (val, grad) = oracle.eval(&c);
            if val <= target {
                return report(c, val);
            }
            best = best.min(val);
            let g = DVector::from_vec(grad);
            let spread = (g.transpose() * &shape * &g)[(0, 0)].max(0.0).sqrt();
            lower = lower.max(val - spread);
            if lower > target {
                return Outcome::Infeasible {
                    gap: lower - target,
                };
            }
            if best - lower <= tol || spread == 0.0 {
                break;
            }
            g
        };
        let pg = &shape * &cut;
        let denom = (cut.transpose() * &pg)[(0, 0)];
        if !(denom > 0.0) {
            break;
        }
        let step = &pg / denom.sqrt();
        center -= &step / (mf + 1.0);
        shape = (&shape - (&step * step.transpose()) * (2.0 / (mf + 1.0)))
            * (mf * mf / (mf * mf - 1.0));
        shape = symmetrize(&shape);
    }
    Outcome::Unknown { best, lower }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn negative_constant_is_feasible() {
        let p = FeasibilityProblem::new(-DMatrix::identity(3, 3), vec![], Sense::NegSemidefinite);
        let out = sdp_feasible(&p, &SdpSettings::default());
        assert!(out.is_feasible());
        assert!((out.certificate().unwrap().margin + 1.0).abs() < 1e-12);
    }

    #[test]
    fn positive_constant_with_psd_multipliers_is_infeasible() {
        let p = FeasibilityProblem::new(
            DMatrix::identity(2, 2),
            vec![diag(&[1.0, 0.0]), diag(&[0.5, 2.0])],
            Sense::NegSemidefinite,
        );
        assert!(matches!(
            sdp_feasible(&p, &SdpSettings::default()),
            Outcome::Infeasible { .. }
        ));
    }

    #[test]
    fn one_multiplier_interval() {
        // [[-1 + e, 0], [0, -2 - e]] <= 0 iff e in [0, 1]
        let p = FeasibilityProblem::new(
            diag(&[-1.0, -2.0]),
            vec![diag(&[1.0, -1.0])],
            Sense::NegSemidefinite,
        );
        let out = sdp_feasible(&p, &SdpSettings::default());
        let e = out.certificate().unwrap().multipliers[0];
        assert!((0.0..=1.0).contains(&e));
        // shifted so that only e in [2, 3] works
        let p = FeasibilityProblem::new(
            diag(&[-3.0, 2.0]),
            vec![diag(&[1.0, -1.0])],
            Sense::NegSemidefinite,
        );
        let out = sdp_feasible(&p, &SdpSettings::default());
        let e = out.certificate().unwrap().multipliers[0];
        assert!((2.0..=3.0).contains(&e), "{e}");
        assert!(p.evaluate(&[e]).symmetric_eigenvalues().max() <= 0.0);
    }

    #[test]
    fn two_multipliers_need_both() {
        // diag(1 - a, 1 - b, a + b - 3) <= 0 needs a >= 1, b >= 1, a + b <= 3
        let p = FeasibilityProblem::new(
            diag(&[1.0, 1.0, -3.0]),
            vec![diag(&[-1.0, 0.0, 1.0]), diag(&[0.0, -1.0, 1.0])],
            Sense::NegSemidefinite,
        );
        let out = sdp_feasible(&p, &SdpSettings::default());
        let c = out.certificate().expect("feasible");
        let (a, b) = (c.multipliers[0], c.multipliers[1]);
        assert!(a >= 1.0 - 1e-12 && b >= 1.0 - 1e-12 && a + b <= 3.0 + 1e-12);
        // make it impossible: a + b <= 1.5
        let p = FeasibilityProblem::new(
            diag(&[1.0, 1.0, -1.5]),
            vec![diag(&[-1.0, 0.0, 1.0]), diag(&[0.0, -1.0, 1.0])],
            Sense::NegSemidefinite,
        );
        assert!(matches!(
            sdp_feasible(&p, &SdpSettings::default()),
            Outcome::Infeasible { .. }
        ));
    }

    #[test]
    fn positive_definite_sense_uses_margin() {
        let p = FeasibilityProblem::new(diag(&[1.0, 2.0]), vec![], Sense::PosDefinite);
        assert!(sdp_feasible(&p, &SdpSettings::default()).is_feasible());
        let p = FeasibilityProblem::new(diag(&[1.0, 0.0]), vec![], Sense::PosDefinite);
        assert!(!sdp_feasible(&p, &SdpSettings::default()).is_feasible());
        // diag(1, -1 + e) > 0 needs e > 1
        let p = FeasibilityProblem::new(
            diag(&[1.0, -1.0]),
            vec![diag(&[0.0, 1.0])],
            Sense::PosDefinite,
        );
        let out = sdp_feasible(&p, &SdpSettings::default());
        assert!(out.certificate().unwrap().multipliers[0] > 1.0);
    }

    #[test]
    fn off_diagonal_coupling() {
        // [[-1, 1], [1, -1]] + e [[0, 0], [0, -1]] <= 0 for every e >= 0
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let p = FeasibilityProblem::new(c.clone(), vec![diag(&[0.0, -1.0])], Sense::NegSemidefinite);
        assert!(sdp_feasible(&p, &SdpSettings::default()).is_feasible());
        // [[-1, 2], [2, -1]] + e diag(0, -1): needs -1 - e <= -4 i.e. e >= 3
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 2.0, -1.0]);
        let p = FeasibilityProblem::new(c, vec![diag(&[0.0, -1.0])], Sense::NegSemidefinite);
        let e = sdp_feasible(&p, &SdpSettings::default())
            .certificate()
            .unwrap()
            .multipliers[0];
        assert!(e >= 3.0 - 1e-9);
    }
}
