//! Closed-loop PETC data: plant, dynamic (or static) output controller,
//! trigger parameters, and the derived trigger and output-map matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch between {first} and {second}: {detail}")]
    DimensionMismatch {
        first: &'static str,
        second: &'static str,
        detail: String,
    },
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },
}

fn mismatch(first: &'static str, second: &'static str, detail: String) -> ModelError {
    ModelError::DimensionMismatch {
        first,
        second,
        detail,
    }
}

/// Continuous-time plant `dx/dt = A x + B v_hat + E w`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let plant = Self { a, b, e, c };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.a.nrows();
        if n == 0 {
            return Err(ModelError::InvalidParameter {
                name: "plant.a",
                detail: "plant must have at least one state".into(),
            });
        }
        if self.a.ncols() != n {
            return Err(mismatch(
                "plant.a",
                "plant.a",
                format!("A_p must be square, got {}x{}", n, self.a.ncols()),
            ));
        }
        if self.b.nrows() != n {
            return Err(mismatch(
                "plant.a",
                "plant.b",
                format!("B_p has {} rows, expected {}", self.b.nrows(), n),
            ));
        }
        if self.e.nrows() != n {
            return Err(mismatch(
                "plant.a",
                "plant.e",
                format!("E has {} rows, expected {}", self.e.nrows(), n),
            ));
        }
        if self.c.ncols() != n {
            return Err(mismatch(
                "plant.a",
                "plant.c",
                format!("C_p has {} columns, expected {}", self.c.ncols(), n),
            ));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_disturbances(&self) -> usize {
        self.e.ncols()
    }
}

/// Discrete-time controller `xc+ = A_c xc + B_c y_hat`, `v = C_c xc + D_c y_hat`.
///
/// A controller with zero states is a static output feedback `v = D_c y_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl ControllerModel {
    /// Static feedback `v = K y_hat`.
    pub fn static_gain(k: DMatrix<f64>) -> Self {
        let (nv, ny) = k.shape();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, ny),
            c: DMatrix::zeros(nv, 0),
            d: k,
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self, plant: &PlantModel) -> Result<(), ModelError> {
        let nc = self.a.nrows();
        let ny = plant.n_outputs();
        let nv = plant.n_inputs();
        if self.a.ncols() != nc {
            return Err(mismatch(
                "controller.a",
                "controller.a",
                format!("A_c must be square, got {}x{}", nc, self.a.ncols()),
            ));
        }
        if self.b.shape() != (nc, ny) {
            return Err(mismatch(
                "controller.b",
                "plant.c",
                format!("B_c is {:?}, expected ({nc}, {ny})", self.b.shape()),
            ));
        }
        if self.c.shape() != (nv, nc) {
            return Err(mismatch(
                "controller.c",
                "plant.b",
                format!("C_c is {:?}, expected ({nv}, {nc})", self.c.shape()),
            ));
        }
        if self.d.shape() != (nv, ny) {
            return Err(mismatch(
                "controller.d",
                "plant.b",
                format!("D_c is {:?}, expected ({nv}, {ny})", self.d.shape()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerParams {
    /// Relative threshold of the event condition.
    pub sigma: f64,
    /// Sampling period in seconds.
    pub h: f64,
    /// Bound on the sup-norm of the disturbance.
    pub w_bound: f64,
}

impl TriggerParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(ModelError::InvalidParameter {
                name: "sigma",
                detail: format!("must lie in (0, 1), got {}", self.sigma),
            });
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "h",
                detail: format!("must be positive and finite, got {}", self.h),
            });
        }
        if !(self.w_bound >= 0.0 && self.w_bound.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "w_bound",
                detail: format!("must be finite and nonnegative, got {}", self.w_bound),
            });
        }
        Ok(())
    }
}

/// Symmetric matrix `Q` of the quadratic event condition `xi' Q xi > 0`, with
/// `xi = [xp; xc; y_hat; v_hat]`. Stored by blocks; the lower-left block is `Q2'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerMatrix {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q4: DMatrix<f64>,
    pub sigma: f64,
    pub n_p: usize,
}

impl TriggerMatrix {
    pub fn q3(&self) -> DMatrix<f64> {
        self.q2.transpose()
    }

    /// Full `Q = [Q1 Q2; Q2' Q4]`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let nx = self.q1.nrows();
        let nu = self.q4.nrows();
        let mut q = DMatrix::zeros(nx + nu, nx + nu);
        q.view_mut((0, 0), (nx, nx)).copy_from(&self.q1);
        q.view_mut((0, nx), (nx, nu)).copy_from(&self.q2);
        q.view_mut((nx, 0), (nu, nx)).copy_from(&self.q2.transpose());
        q.view_mut((nx, nx), (nu, nu)).copy_from(&self.q4);
        q
    }

    pub fn dim(&self) -> usize {
        self.q1.nrows() + self.q4.nrows()
    }

    /// Plant-state block of `Q1`, `(Q1)_{pp}`.
    pub fn q1_plant_block(&self) -> DMatrix<f64> {
        self.q1.view((0, 0), (self.n_p, self.n_p)).into_owned()
    }
}

/// `C_E = [C_p 0; D_c C_p C_c]`, so that the held input is `u_hat = C_E x`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMapMatrix {
    pub c_e: DMatrix<f64>,
}

pub fn build_trigger_matrix(
    plant: &PlantModel,
    ctrl: &ControllerModel,
    sigma: f64,
) -> Result<TriggerMatrix, ModelError> {
    plant.validate()?;
    ctrl.validate(plant)?;
    if !(sigma > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "sigma",
            detail: format!("must be positive, got {sigma}"),
        });
    }
    let np = plant.n_states();
    let nc = ctrl.n_states();
    let ny = plant.n_outputs();
    let nv = plant.n_inputs();
    let cp = &plant.c;
    let s = 1.0 - sigma;

    let mut q1 = DMatrix::zeros(np + nc, np + nc);
    q1.view_mut((0, 0), (np, np))
        .copy_from(&(cp.transpose() * cp * s));
    q1.view_mut((np, np), (nc, nc))
        .copy_from(&(ctrl.c.transpose() * &ctrl.c * s));

    let mut q2 = DMatrix::zeros(np + nc, ny + nv);
    q2.view_mut((0, 0), (np, ny)).copy_from(&(-cp.transpose()));
    q2.view_mut((np, 0), (nc, ny))
        .copy_from(&(ctrl.c.transpose() * &ctrl.d * s));
    q2.view_mut((np, ny), (nc, nv))
        .copy_from(&(-ctrl.c.transpose()));

    let mut q4 = DMatrix::zeros(ny + nv, ny + nv);
    q4.view_mut((0, 0), (ny, ny)).copy_from(
        &(DMatrix::identity(ny, ny) + ctrl.d.transpose() * &ctrl.d * s),
    );
    q4.view_mut((0, ny), (ny, nv)).copy_from(&(-ctrl.d.transpose()));
    q4.view_mut((ny, 0), (nv, ny)).copy_from(&(-&ctrl.d));
    q4.view_mut((ny, ny), (nv, nv))
        .copy_from(&DMatrix::identity(nv, nv));

    Ok(TriggerMatrix {
        q1,
        q2,
        q4,
        sigma,
        n_p: np,
    })
}

pub fn build_output_map(
    plant: &PlantModel,
    ctrl: &ControllerModel,
) -> Result<OutputMapMatrix, ModelError> {
    plant.validate()?;
    ctrl.validate(plant)?;
    let np = plant.n_states();
    let nc = ctrl.n_states();
    let ny = plant.n_outputs();
    let nv = plant.n_inputs();
    let mut c_e = DMatrix::zeros(ny + nv, np + nc);
    c_e.view_mut((0, 0), (ny, np)).copy_from(&plant.c);
    c_e.view_mut((ny, 0), (nv, np))
        .copy_from(&(&ctrl.d * &plant.c));
    c_e.view_mut((ny, np), (nv, nc)).copy_from(&ctrl.c);
    Ok(OutputMapMatrix { c_e })
}

/// The complete loop: plant, controller, trigger parameters and derived matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PetcSystem {
    pub plant: PlantModel,
    pub controller: ControllerModel,
    pub params: TriggerParams,
    pub q: TriggerMatrix,
    pub output_map: OutputMapMatrix,
    q_full: DMatrix<f64>,
}

impl PetcSystem {
    pub fn new(
        plant: PlantModel,
        controller: ControllerModel,
        params: TriggerParams,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        let q = build_trigger_matrix(&plant, &controller, params.sigma)?;
        let output_map = build_output_map(&plant, &controller)?;
        let q_full = q.assemble();
        Ok(Self {
            plant,
            controller,
            params,
            q,
            output_map,
            q_full,
        })
    }

    pub fn n_p(&self) -> usize {
        self.plant.n_states()
    }
    pub fn n_c(&self) -> usize {
        self.controller.n_states()
    }
    /// Dimension of the partitioned state `x = [xp; xc]`.
    pub fn n_x(&self) -> usize {
        self.n_p() + self.n_c()
    }
    pub fn h(&self) -> f64 {
        self.params.h
    }

    pub fn q_matrix(&self) -> &DMatrix<f64> {
        &self.q_full
    }

    pub fn c_e(&self) -> &DMatrix<f64> {
        &self.output_map.c_e
    }

    /// Quadratic form `xi' Q xi` for the current state `x` and the held input
    /// `u_hat = C_E * u_hat_source`, where `u_hat_source` is the state at the
    /// last update. An event fires iff the value is positive.
    pub fn trigger_value(&self, x: &DVector<f64>, u_hat_source: &DVector<f64>) -> f64 {
        let u_hat = self.c_e() * u_hat_source;
        self.trigger_value_held(x, &u_hat)
    }

    /// Same as [`trigger_value`](Self::trigger_value) with the held input given directly.
    pub fn trigger_value_held(&self, x: &DVector<f64>, u_hat: &DVector<f64>) -> f64 {
        let nx = self.n_x();
        assert_eq!(x.len(), nx, "state dimension");
        assert_eq!(u_hat.len(), self.q.q4.nrows(), "held input dimension");
        let mut xi = DVector::zeros(nx + u_hat.len());
        xi.rows_mut(0, nx).copy_from(x);
        xi.rows_mut(nx, u_hat.len()).copy_from(u_hat);
        (xi.transpose() * &self.q_full * &xi)[(0, 0)]
    }
}
