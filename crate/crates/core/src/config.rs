//! Run configuration: one JSON file, matrices row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::content_hash;
use crate::linalg::from_rows;
use crate::model::{ControllerModel, ModelError, PetcSystem, PlantModel, TriggerParams};
use crate::partition::{build_partition, Partition, PartitionError, ShellRadii};
use crate::reach::ReachSettings;
use crate::sdp::SdpSettings;
use crate::sim::DisturbanceSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("{field}: {detail}")]
    Field { field: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

fn field(field: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    /// Identity when omitted.
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
}

/// Either a static gain `v = K y_hat` or a full discrete-time controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ControllerConfig {
    Gain {
        gain: Vec<Vec<f64>>,
    },
    Dynamic {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub q1: usize,
    pub q2: usize,
    #[serde(default = "default_radii")]
    pub radii: ShellRadii,
    /// Outer radius for the unbounded shell in reachability (10 x last radius if absent).
    #[serde(default)]
    pub truncation_radius: Option<f64>,
}

fn default_radii() -> ShellRadii {
    ShellRadii::Geometric {
        inner: 0.5,
        outer: 8.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub margin: f64,
    pub max_iterations: usize,
    pub multiplier_cap: f64,
    pub psi_scale: f64,
    /// Safety cap on the global step bound.
    pub k_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let sdp = SdpSettings::default();
        Self {
            margin: sdp.margin,
            max_iterations: sdp.max_iterations,
            multiplier_cap: sdp.multiplier_cap,
            psi_scale: 1.0,
            k_cap: 5000,
        }
    }
}

impl SolverConfig {
    pub fn sdp(&self) -> SdpSettings {
        SdpSettings {
            margin: self.margin,
            max_iterations: self.max_iterations,
            multiplier_cap: self.multiplier_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachConfig {
    pub arc_segments: usize,
    pub ball_sides: usize,
}

impl Default for ReachConfig {
    fn default() -> Self {
        let d = ReachSettings::default();
        Self {
            arc_segments: d.arc_segments,
            ball_sides: d.ball_sides,
        }
    }
}

/// A fully specified run exported with its state trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub x0: Vec<f64>,
    pub disturbance: DisturbanceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon_s: f64,
    pub seed: u64,
    /// Random runs; starts cycle over the regions, disturbances over `disturbances`.
    pub runs: usize,
    pub substeps: usize,
    /// Random-disturbance seeds are replaced by per-run seeds.
    pub disturbances: Vec<DisturbanceSpec>,
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon_s: 10.0,
            seed: 1,
            runs: 300,
            substeps: crate::sim::DEFAULT_SUBSTEPS,
            disturbances: vec![DisturbanceSpec::Zero],
            scenarios: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub sigma: f64,
    pub h: f64,
    #[serde(rename = "W")]
    pub w_bound: f64,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub reach: ReachConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

fn matrix(name: &str, rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<nalgebra::DMatrix<f64>, ConfigError> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field(name, "entries must be finite"));
    }
    from_rows(rows, ncols_if_empty).ok_or_else(|| field(name, "rows have different lengths"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Short SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        content_hash(self)
    }

    pub fn system(&self) -> Result<PetcSystem, ConfigError> {
        let a = matrix("plant.a", &self.plant.a, 0)?;
        let np = a.nrows();
        let b = matrix("plant.b", &self.plant.b, 0)?;
        let e = matrix("plant.e", &self.plant.e, 0)?;
        let c = match &self.plant.c {
            Some(c) => matrix("plant.c", c, np)?,
            None => nalgebra::DMatrix::identity(np, np),
        };
        let plant = PlantModel::new(a, b, e, c)?;
        let controller = match &self.controller {
            ControllerConfig::Gain { gain } => {
                ControllerModel::static_gain(matrix("controller.gain", gain, plant.n_outputs())?)
            }
            ControllerConfig::Dynamic { a, b, c, d } => ControllerModel {
                a: matrix("controller.a", a, 0)?,
                b: matrix("controller.b", b, plant.n_outputs())?,
                c: matrix("controller.c", c, 0)?,
                d: matrix("controller.d", d, plant.n_outputs())?,
            },
        };
        Ok(PetcSystem::new(
            plant,
            controller,
            TriggerParams {
                sigma: self.sigma,
                h: self.h,
                w_bound: self.w_bound,
            },
        )?)
    }

    pub fn build_partition(&self, n_x: usize) -> Result<Partition, ConfigError> {
        Ok(build_partition(n_x, self.partition.q1, self.partition.q2, &self.partition.radii)?)
    }

    pub fn reach_settings(&self) -> ReachSettings {
        ReachSettings {
            arc_segments: self.reach.arc_segments,
            ball_sides: self.reach.ball_sides,
            truncation_radius: self.partition.truncation_radius,
        }
    }

    /// Checks everything that can be checked without computation.
    pub fn validate(&self) -> Result<(PetcSystem, Partition), ConfigError> {
        let sys = self.system()?;
        let part = self.build_partition(sys.n_x())?;
        let s = &self.solver;
        if !(s.margin >= 1e-12 && s.margin.is_finite()) {
            return Err(field("solver.margin", "must be a positive number"));
        }
        if !(s.psi_scale > 0.0 && s.psi_scale.is_finite()) {
            return Err(field("solver.psi_scale", "must be positive"));
        }
        if s.k_cap == 0 || s.max_iterations == 0 {
            return Err(field("solver", "k_cap and max_iterations must be positive"));
        }
        if !(s.multiplier_cap > 0.0) {
            return Err(field("solver.multiplier_cap", "must be positive"));
        }
        if self.reach.arc_segments == 0 || self.reach.ball_sides < 3 {
            return Err(field("reach", "arc_segments >= 1 and ball_sides >= 3 required"));
        }
        if let Some(t) = self.partition.truncation_radius {
            let last = part.radii.last().copied().unwrap_or(0.0);
            if !(t > last && t.is_finite()) {
                return Err(field(
                    "partition.truncation_radius",
                    format!("must exceed the last shell radius {last}"),
                ));
            }
        }
        let sim = &self.simulation;
        if !(sim.horizon_s > 0.0 && sim.horizon_s.is_finite()) {
            return Err(field("simulation.horizon_s", "must be positive"));
        }
        if sim.substeps == 0 || sim.substeps % 2 == 1 {
            return Err(field("simulation.substeps", "must be even and positive"));
        }
        if sim.runs > 0 && sim.disturbances.is_empty() {
            return Err(field("simulation.disturbances", "at least one signal is needed"));
        }
        let n_w = sys.plant.n_disturbances();
        for (i, d) in sim
            .disturbances
            .iter()
            .chain(sim.scenarios.iter().map(|s| &s.disturbance))
            .enumerate()
        {
            crate::sim::Disturbance::realize(d, n_w, self.h, sim.horizon_s, self.w_bound)
                .map_err(|e| field(&format!("simulation.disturbances[{i}]"), e.to_string()))?;
        }
        for (i, s) in sim.scenarios.iter().enumerate() {
            if s.x0.len() != sys.n_x() {
                return Err(field(
                    &format!("simulation.scenarios[{i}].x0"),
                    format!("expected {} entries, got {}", sys.n_x(), s.x0.len()),
                ));
            }
        }
        Ok((sys, part))
    }

    /// Number of samples in the simulation horizon.
    pub fn horizon_steps(&self) -> usize {
        (self.simulation.horizon_s / self.h).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "plant": {"a": [[0, 1], [-2, 3]], "b": [[0], [1]], "e": [[1], [0]]},
        "controller": {"gain": [[1, -4]]},
        "sigma": 0.1, "h": 0.005, "W": 2,
        "partition": {"q1": 8, "q2": 6}
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let (sys, part) = cfg.validate().unwrap();
        assert_eq!(sys.n_x(), 2);
        assert_eq!(part.n_regions(), 48);
        assert_eq!(cfg.solver.psi_scale, 1.0);
        assert_eq!(cfg.hash().len(), 16);
        assert_eq!(cfg.horizon_steps(), 2000);
    }

    #[test]
    fn bad_dimensions_name_the_field() {
        let text = MINIMAL.replace("\"b\": [[0], [1]]", "\"b\": [[0], [1], [2]]");
        let err = RunConfig::from_json(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("plant.b") || err.to_string().contains("B_p"), "{err}");
        let ragged = MINIMAL.replace("[[0, 1], [-2, 3]]", "[[0, 1], [-2]]");
        let err = RunConfig::from_json(&ragged).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("plant.a"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = MINIMAL.replace("\"sigma\"", "\"sgima\": 1, \"sigma\"");
        assert!(RunConfig::from_json(&text).is_err());
    }
}
