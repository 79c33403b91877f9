//! Disturbance signals with a checked sup-norm bound.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Configurable disturbance; `direction` vectors are normalized, the first input
/// channel is used when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSpec {
    Zero,
    /// `amplitude * sin(angular_frequency * t + phase)` inside `window` (whole run if absent).
    Sinusoid {
        amplitude: f64,
        angular_frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        window: Option<[f64; 2]>,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// `value` from `time` on, zero before.
    Step { time: f64, value: Vec<f64> },
    /// Constant over blocks of `hold_steps` samples, drawn uniformly from the ball of radius `cap`.
    PiecewiseRandom { cap: f64, hold_steps: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Signal {
    Zero,
    Sinusoid {
        amplitude: f64,
        omega: f64,
        phase: f64,
        window: Option<[f64; 2]>,
        direction: DVector<f64>,
    },
    Step {
        time: f64,
        value: DVector<f64>,
    },
    Blocks {
        period: f64,
        values: Vec<DVector<f64>>,
    },
}

/// A disturbance realized for one run: `n_w` channels over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub spec: DisturbanceSpec,
    n_w: usize,
    signal: Signal,
}

fn unit_direction(direction: &Option<Vec<f64>>, n_w: usize) -> Result<DVector<f64>, SimError> {
    let d = match direction {
        Some(v) => DVector::from_column_slice(v),
        None => {
            let mut d = DVector::zeros(n_w);
            if n_w > 0 {
                d[0] = 1.0;
            }
            d
        }
    };
    if d.len() != n_w {
        return Err(SimError::Disturbance(format!(
            "direction has {} entries, the plant has {n_w} disturbance inputs",
            d.len()
        )));
    }
    let n = d.norm();
    if n_w > 0 && !(n > 0.0) {
        return Err(SimError::Disturbance("direction must be nonzero".into()));
    }
    Ok(if n > 0.0 { d / n } else { d })
}

impl Disturbance {
    pub fn zero(n_w: usize) -> Self {
        Self {
            spec: DisturbanceSpec::Zero,
            n_w,
            signal: Signal::Zero,
        }
    }

    /// Realizes `spec` for `n_w` channels up to time `horizon`, rejecting signals whose
    /// Euclidean norm can exceed `w_bound`.
    pub fn realize(spec: &DisturbanceSpec, n_w: usize, h: f64, horizon: f64, w_bound: f64) -> Result<Self, SimError> {
        let signal = match spec {
            DisturbanceSpec::Zero => Signal::Zero,
            DisturbanceSpec::Sinusoid {
                amplitude,
                angular_frequency,
                phase,
                window,
                direction,
            } => Signal::Sinusoid {
                amplitude: *amplitude,
                omega: *angular_frequency,
                phase: *phase,
                window: *window,
                direction: unit_direction(direction, n_w)?,
            },
            DisturbanceSpec::Step { time, value } => {
                if value.len() != n_w {
                    return Err(SimError::Disturbance(format!(
                        "step value has {} entries, the plant has {n_w} disturbance inputs",
                        value.len()
                    )));
                }
                Signal::Step {
                    time: *time,
                    value: DVector::from_column_slice(value),
                }
            }
            DisturbanceSpec::PiecewiseRandom { cap, hold_steps, seed } => {
                if *hold_steps == 0 {
                    return Err(SimError::Disturbance("hold_steps must be positive".into()));
                }
                let period = *hold_steps as f64 * h;
                let blocks = (horizon / period).ceil() as usize + 1;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let values = (0..blocks).map(|_| draw_in_ball(&mut rng, n_w, *cap)).collect();
                Signal::Blocks { period, values }
            }
        };
        let d = Self {
            spec: spec.clone(),
            n_w,
            signal,
        };
        let sup = d.sup_norm();
        if !(sup <= w_bound * (1.0 + 1e-12)) {
            return Err(SimError::DisturbanceBound { sup, bound: w_bound });
        }
        Ok(d)
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    /// Upper bound on `|w(t)|` over the run.
    pub fn sup_norm(&self) -> f64 {
        match &self.signal {
            Signal::Zero => 0.0,
            Signal::Sinusoid { amplitude, .. } => amplitude.abs(),
            Signal::Step { value, .. } => value.norm(),
            Signal::Blocks { values, .. } => values.iter().map(|v| v.norm()).fold(0.0, f64::max),
        }
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        match &self.signal {
            Signal::Zero => DVector::zeros(self.n_w),
            Signal::Sinusoid {
                amplitude,
                omega,
                phase,
                window,
                direction,
            } => {
                let active = window.map_or(true, |[a, b]| t >= a && t <= b);
                if active {
                    direction * (amplitude * (omega * t + phase).sin())
                } else {
                    DVector::zeros(self.n_w)
                }
            }
            Signal::Step { time, value } => {
                if t >= *time {
                    value.clone()
                } else {
                    DVector::zeros(self.n_w)
                }
            }
            Signal::Blocks { period, values } => {
                let i = ((t / period).floor().max(0.0) as usize).min(values.len() - 1);
                values[i].clone()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.signal, Signal::Zero)
    }
}

fn draw_in_ball(rng: &mut ChaCha8Rng, n: usize, cap: f64) -> DVector<f64> {
    if n == 0 {
        return DVector::zeros(0);
    }
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        if v.norm() <= 1.0 {
            return v * cap;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sinusoid_window() {
        let spec = DisturbanceSpec::Sinusoid {
            amplitude: 2.0,
            angular_frequency: PI,
            phase: 0.0,
            window: Some([3.0, 8.0]),
            direction: None,
        };
        let d = Disturbance::realize(&spec, 1, 0.005, 10.0, 2.0).unwrap();
        assert_eq!(d.value(2.0)[0], 0.0);
        assert!((d.value(3.5)[0] + 2.0).abs() < 1e-12);
        assert_eq!(d.value(9.0)[0], 0.0);
    }

    #[test]
    fn bound_is_enforced() {
        let spec = DisturbanceSpec::Step {
            time: 1.0,
            value: vec![2.5],
        };
        assert!(matches!(
            Disturbance::realize(&spec, 1, 0.005, 10.0, 2.0),
            Err(SimError::DisturbanceBound { .. })
        ));
    }

    #[test]
    fn random_blocks_are_seeded_and_capped() {
        let spec = DisturbanceSpec::PiecewiseRandom {
            cap: 2.0,
            hold_steps: 10,
            seed: 9,
        };
        let a = Disturbance::realize(&spec, 2, 0.005, 5.0, 2.0).unwrap();
        let b = Disturbance::realize(&spec, 2, 0.005, 5.0, 2.0).unwrap();
        assert_eq!(a, b);
        assert!(a.sup_norm() <= 2.0);
        assert_eq!(a.value(0.01), a.value(0.04));
        assert_ne!(a.value(0.01), a.value(0.06));
    }
}
