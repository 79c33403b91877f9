//! Lifted inter-event dynamics `x(k) = M(k) x + Theta(k)` and the matrices that
//! feed the inter-event-time LMIs.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{spectral_norm, sym_eig_max, sym_eig_min};
use crate::model::{PetcSystem, TriggerMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("horizon must be finite and nonnegative, got {0}")]
    NegativeHorizon(f64),
    #[error("Psi must be symmetric positive definite (min eigenvalue {0})")]
    PsiNotPositive(f64),
    #[error("Psi must be {expected}x{expected}, got {rows}x{cols}")]
    PsiShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
}

/// `(e^{A T}, int_0^T e^{A s} ds)` from one exponential of the block matrix
/// `[[A, I], [0, 0]] * T`.
pub fn exp_integral(
    a: &DMatrix<f64>,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    let (n, m) = a.shape();
    if n != m {
        return Err(DynamicsError::NotSquare(n, m));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DynamicsError::NegativeHorizon(t));
    }
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * t));
    let ex = aug.exp();
    Ok((
        ex.view((0, 0), (n, n)).into_owned(),
        ex.view((0, n), (n, n)).into_owned(),
    ))
}

/// `int_0^T e^{lam (T - s)} ds`, i.e. `(e^{lam T} - 1) / lam`, or `T` when `lam = 0`.
pub fn growth_integral(lam: f64, t: f64) -> f64 {
    if lam == 0.0 {
        t
    } else {
        (lam * t).exp_m1() / lam
    }
}

/// Assembles `M(k)` from the plant integral `J(k)` and the controller block.
fn assemble_m(sys: &PetcSystem, integral: &DMatrix<f64>, m2: &DMatrix<f64>) -> DMatrix<f64> {
    let np = sys.n_p();
    let nc = sys.n_c();
    let nx = np + nc;
    let p = &sys.plant;
    let c = &sys.controller;

    // A_p [I 0] + B_p [D_c C_p  C_c]
    let mut drive = DMatrix::zeros(np, nx);
    drive.view_mut((0, 0), (np, np))
        .copy_from(&(&p.a + &p.b * &c.d * &p.c));
    drive.view_mut((0, np), (np, nc)).copy_from(&(&p.b * &c.c));

    let mut m1 = integral * drive;
    for i in 0..np {
        m1[(i, i)] += 1.0;
    }
    let mut m = DMatrix::zeros(nx, nx);
    m.view_mut((0, 0), (np, nx)).copy_from(&m1);
    m.view_mut((np, 0), (nc, nx)).copy_from(m2);
    m
}

/// `[C_p 0]`-driven controller recursion `M2(k+1) = A_c M2(k) + B_c [C_p 0]`.
fn controller_step(sys: &PetcSystem, m2: &DMatrix<f64>) -> DMatrix<f64> {
    let np = sys.n_p();
    let nc = sys.n_c();
    let mut drive = DMatrix::zeros(nc, np + nc);
    drive
        .view_mut((0, 0), (nc, np))
        .copy_from(&(&sys.controller.b * &sys.plant.c));
    &sys.controller.a * m2 + drive
}

fn controller_initial(sys: &PetcSystem) -> DMatrix<f64> {
    let np = sys.n_p();
    let nc = sys.n_c();
    let mut m2 = DMatrix::zeros(nc, np + nc);
    m2.view_mut((0, np), (nc, nc))
        .copy_from(&DMatrix::identity(nc, nc));
    m2
}

/// `M(k)` evaluated directly from one exponential over `k h` and the explicit sum.
pub fn transition_matrix(sys: &PetcSystem, k: usize) -> DMatrix<f64> {
    let (_, integral) = exp_integral(&sys.plant.a, k as f64 * sys.h())
        .expect("plant matrix validated square");
    let mut m2 = controller_initial(sys);
    for _ in 0..k {
        m2 = controller_step(sys, &m2);
    }
    assemble_m(sys, &integral, &m2)
}

/// `lambda_max(A_p + A_p')`.
pub fn plant_log_norm2(sys: &PetcSystem) -> f64 {
    sym_eig_max(&(&sys.plant.a + sys.plant.a.transpose()))
}

/// `d_{A_p}(k) = int_0^{kh} e^{(kh - s) lambda_max(A_p + A_p')} ds`.
pub fn d_ap(sys: &PetcSystem, k: usize) -> f64 {
    growth_integral(plant_log_norm2(sys), k as f64 * sys.h())
}

/// Euclidean radius bounding `|Theta(k)|` for every disturbance with sup-norm at most `W`.
pub fn theta_radius(sys: &PetcSystem, k: usize) -> f64 {
    growth_integral(0.5 * plant_log_norm2(sys), k as f64 * sys.h())
        * spectral_norm(&sys.plant.e)
        * sys.params.w_bound
}

/// Spectral quantities and the Young-inequality weight `Psi` used to
/// decouple the disturbance from the state in the lower-bound LMI.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    /// `lambda_max(A_p + A_p')`
    pub lam: f64,
    /// `lambda_max(E' E)`
    pub lam_e: f64,
    pub mu: f64,
    pub psi: DMatrix<f64>,
}

impl SpectralData {
    /// Uses a full user-provided `Psi` and picks the smallest admissible `mu`.
    pub fn with_psi(sys: &PetcSystem, psi: DMatrix<f64>) -> Result<Self, DynamicsError> {
        let nx = sys.n_x();
        if psi.shape() != (nx, nx) {
            return Err(DynamicsError::PsiShape {
                expected: nx,
                rows: psi.nrows(),
                cols: psi.ncols(),
            });
        }
        let psi = crate::linalg::symmetrize(&psi);
        let min = sym_eig_min(&psi);
        if !(min > 0.0) {
            return Err(DynamicsError::PsiNotPositive(min));
        }
        let np = sys.n_p();
        let block = sys.q.q1_plant_block() + psi.view((0, 0), (np, np));
        Ok(Self {
            lam: plant_log_norm2(sys),
            lam_e: sym_eig_max(&(sys.plant.e.transpose() * &sys.plant.e)).max(0.0),
            mu: sym_eig_max(&block).max(0.0),
            psi,
        })
    }
}

/// `Psi = psi_scale * I` and `mu = lambda_max((Q1)_pp) + psi_scale`.
pub fn choose_psi_mu(sys: &PetcSystem, psi_scale: f64) -> SpectralData {
    assert!(psi_scale > 0.0, "psi_scale must be positive");
    let nx = sys.n_x();
    SpectralData {
        lam: plant_log_norm2(sys),
        lam_e: sym_eig_max(&(sys.plant.e.transpose() * &sys.plant.e)).max(0.0),
        mu: mu_for_scale(&sys.q, psi_scale),
        psi: DMatrix::identity(nx, nx) * psi_scale,
    }
}

fn mu_for_scale(q: &TriggerMatrix, psi_scale: f64) -> f64 {
    (sym_eig_max(&q.q1_plant_block()) + psi_scale).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiMatrices {
    pub phi1: DMatrix<f64>,
    pub phi2: DMatrix<f64>,
    pub phi3: f64,
}

/// Per-step cache of `M(k)`, `e^{A_p kh}` and `J(k)` for `k = 0..=k_max`, built by the
/// semigroup recursion `J(k+1) = J(k) + e^{A_p kh} J(1)`.
#[derive(Debug, Clone)]
pub struct LiftedDynamics {
    sys: PetcSystem,
    exp_ah: Vec<DMatrix<f64>>,
    integral: Vec<DMatrix<f64>>,
    m: Vec<DMatrix<f64>>,
    lam: f64,
    e_norm: f64,
}

impl LiftedDynamics {
    pub fn new(sys: &PetcSystem, k_max: usize) -> Self {
        let np = sys.n_p();
        let (step_exp, step_int) =
            exp_integral(&sys.plant.a, sys.h()).expect("plant matrix validated square");
        let mut exp_ah = Vec::with_capacity(k_max + 1);
        let mut integral = Vec::with_capacity(k_max + 1);
        let mut m = Vec::with_capacity(k_max + 1);
        let mut e_k = DMatrix::identity(np, np);
        let mut j_k = DMatrix::zeros(np, np);
        let mut m2 = controller_initial(sys);
        for k in 0..=k_max {
            m.push(assemble_m(sys, &j_k, &m2));
            exp_ah.push(e_k.clone());
            integral.push(j_k.clone());
            if k < k_max {
                j_k = &j_k + &e_k * &step_int;
                e_k = &step_exp * &e_k;
                m2 = controller_step(sys, &m2);
            }
        }
        Self {
            sys: sys.clone(),
            exp_ah,
            integral,
            m,
            lam: plant_log_norm2(sys),
            e_norm: spectral_norm(&sys.plant.e),
        }
    }

    pub fn system(&self) -> &PetcSystem {
        &self.sys
    }

    pub fn k_max(&self) -> usize {
        self.m.len() - 1
    }

    pub fn m(&self, k: usize) -> &DMatrix<f64> {
        &self.m[k]
    }

    pub fn exp_ah(&self, k: usize) -> &DMatrix<f64> {
        &self.exp_ah[k]
    }

    pub fn integral(&self, k: usize) -> &DMatrix<f64> {
        &self.integral[k]
    }

    pub fn lam(&self) -> f64 {
        self.lam
    }

    pub fn d_ap(&self, k: usize) -> f64 {
        growth_integral(self.lam, k as f64 * self.sys.h())
    }

    pub fn theta_radius(&self, k: usize) -> f64 {
        self.theta_radius_for(k, self.sys.params.w_bound)
    }

    pub fn theta_radius_for(&self, k: usize, w_bound: f64) -> f64 {
        growth_integral(0.5 * self.lam, k as f64 * self.sys.h()) * self.e_norm * w_bound
    }

    /// `Phi1(k) = M'Q1M + M'Q2C_E + C_E'Q3M + C_E'Q4C_E`.
    pub fn phi1(&self, k: usize) -> DMatrix<f64> {
        let q = &self.sys.q;
        let m = &self.m[k];
        let ce = self.sys.c_e();
        let cross = m.transpose() * &q.q2 * ce;
        let phi = m.transpose() * &q.q1 * m + &cross + cross.transpose()
            + ce.transpose() * &q.q4 * ce;
        crate::linalg::symmetrize(&phi)
    }

    /// `Phi2(k) = M'Q1 + C_E'Q3`.
    pub fn phi2(&self, k: usize) -> DMatrix<f64> {
        let q = &self.sys.q;
        self.m[k].transpose() * &q.q1 + self.sys.c_e().transpose() * q.q3()
    }

    /// `Phi3(k) = kh mu lambda_max(E'E) d_{A_p}(k)`.
    pub fn phi3(&self, spec: &SpectralData, k: usize) -> f64 {
        let kh = k as f64 * self.sys.h();
        kh * spec.mu * spec.lam_e * self.d_ap(k)
    }

    pub fn phi_matrices(&self, spec: &SpectralData, k: usize) -> PhiMatrices {
        PhiMatrices {
            phi1: self.phi1(k),
            phi2: self.phi2(k),
            phi3: self.phi3(spec, k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControllerModel, PlantModel, TriggerParams};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn example() -> PetcSystem {
        let plant = PlantModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let ctrl = ControllerModel::static_gain(DMatrix::from_row_slice(1, 2, &[1.0, -4.0]));
        PetcSystem::new(
            plant,
            ctrl,
            TriggerParams {
                sigma: 0.1,
                h: 0.005,
                w_bound: 2.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn exp_integral_of_zero() {
        let (e, j) = exp_integral(&DMatrix::zeros(3, 3), 0.7).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
        assert_relative_eq!(j, DMatrix::identity(3, 3) * 0.7, epsilon = 1e-15);
    }

    #[test]
    fn exp_integral_scalar_closed_form() {
        for (a, t) in [(-1.3, 0.4), (2.0, 0.25), (0.01, 3.0)] {
            let (e, j) = exp_integral(&DMatrix::from_element(1, 1, a), t).unwrap();
            assert_relative_eq!(e[(0, 0)], (a * t).exp(), max_relative = 1e-13);
            assert_relative_eq!(j[(0, 0)], (a * t).exp_m1() / a, max_relative = 1e-12);
        }
    }

    #[test]
    fn exp_integral_errors() {
        assert_eq!(
            exp_integral(&DMatrix::zeros(2, 3), 1.0),
            Err(DynamicsError::NotSquare(2, 3))
        );
        assert!(exp_integral(&DMatrix::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn m_of_zero_is_identity() {
        let sys = example();
        assert_eq!(transition_matrix(&sys, 0), DMatrix::identity(2, 2));
        let cache = LiftedDynamics::new(&sys, 5);
        assert_eq!(cache.m(0), &DMatrix::identity(2, 2));
    }

    #[test]
    fn cached_and_direct_m_agree() {
        let sys = example();
        let cache = LiftedDynamics::new(&sys, 200);
        for k in [1, 7, 50, 200] {
            let direct = transition_matrix(&sys, k);
            assert_relative_eq!(cache.m(k), &direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn controller_sum_with_deadbeat_controller() {
        // n_p = n_y = n_c = 1, A_c = 0, B_c = 1, C_p = 1: M2(2) = [1 0]
        let plant = PlantModel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let ctrl = ControllerModel {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 0.5),
            d: DMatrix::from_element(1, 1, -0.2),
        };
        let sys = PetcSystem::new(
            plant,
            ctrl,
            TriggerParams {
                sigma: 0.2,
                h: 0.1,
                w_bound: 0.0,
            },
        )
        .unwrap();
        let m = transition_matrix(&sys, 2);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        let m0 = transition_matrix(&sys, 0);
        assert_eq!(m0, DMatrix::identity(2, 2));
    }

    #[test]
    fn d_ap_cases() {
        assert_eq!(growth_integral(0.0, 0.35), 0.35);
        let sys = example();
        assert_eq!(d_ap(&sys, 0), 0.0);
        let lam = 3.0 + 10f64.sqrt();
        assert_relative_eq!(plant_log_norm2(&sys), lam, max_relative = 1e-13);
        assert_relative_eq!(d_ap(&sys, 1), (lam * 0.005).exp_m1() / lam, max_relative = 1e-13);
    }

    #[test]
    fn theta_radius_zero_cases_and_linearity() {
        let sys = example();
        assert_eq!(theta_radius(&sys, 0), 0.0);
        let mut quiet = sys.clone();
        quiet.params.w_bound = 0.0;
        assert_eq!(theta_radius(&quiet, 10), 0.0);
        let cache = LiftedDynamics::new(&sys, 50);
        let mut prev = 0.0;
        for k in 0..=50 {
            let r = cache.theta_radius(k);
            assert!(r >= prev);
            prev = r;
            assert_relative_eq!(cache.theta_radius_for(k, 4.0), 2.0 * r, max_relative = 1e-14);
        }
    }

    #[test]
    fn psi_mu_invariant() {
        let sys = example();
        for scale in [0.1, 1.0, 10.0] {
            let spec = choose_psi_mu(&sys, scale);
            let block = sys.q.q1_plant_block() + DMatrix::identity(2, 2) * scale
                - DMatrix::identity(2, 2) * spec.mu;
            assert!(sym_eig_max(&block) <= 1e-12);
        }
        let mut zero_q = sys.q.clone();
        zero_q.q1.fill(0.0);
        assert_eq!(mu_for_scale(&zero_q, 1.0), 1.0);
        assert!(SpectralData::with_psi(&sys, -DMatrix::identity(2, 2)).is_err());
        let full = SpectralData::with_psi(&sys, DMatrix::identity(2, 2) * 2.0).unwrap();
        assert_relative_eq!(full.mu, 2.9, max_relative = 1e-12);
    }

    #[test]
    fn phi_at_zero_matches_fresh_update() {
        let sys = example();
        let cache = LiftedDynamics::new(&sys, 1);
        let spec = choose_psi_mu(&sys, 1.0);
        let phi = cache.phi_matrices(&spec, 0);
        assert_eq!(phi.phi3, 0.0);
        for x in [[1.0, 0.0], [0.3, -2.0], [-1.0, 5.0]] {
            let x = DVector::from_row_slice(&x);
            let lhs = (x.transpose() * &phi.phi1 * &x)[(0, 0)];
            assert_relative_eq!(lhs, sys.trigger_value(&x, &x), max_relative = 1e-12);
        }
        assert!(sym_eig_max(&phi.phi1) < 0.0);
    }

    #[test]
    fn phi3_vanishes_without_disturbance_input() {
        let mut sys = example();
        sys.plant.e.fill(0.0);
        let cache = LiftedDynamics::new(&sys, 20);
        let spec = choose_psi_mu(&sys, 1.0);
        assert!((0..=20).all(|k| cache.phi3(&spec, k) == 0.0));
    }
}
