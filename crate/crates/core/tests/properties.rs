use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix2};
use proptest::prelude::*;

use petc_traffic::dynamics::LiftedDynamics;
use petc_traffic::geometry::{Point, Polytope};
use petc_traffic::io::{round_sig, to_stable_json};
use petc_traffic::model::{ControllerModel, PetcSystem, PlantModel, TriggerParams};
use petc_traffic::partition::{build_partition, Partition, ShellRadii};
use petc_traffic::reach::minkowski_ball;
use petc_traffic::sim::disturbance::{Disturbance, DisturbanceSpec};
use petc_traffic::sim::exact_event_steps_w0;

fn example() -> PetcSystem {
    let plant = PlantModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 3.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let ctrl = ControllerModel::static_gain(DMatrix::from_row_slice(1, 2, &[1.0, -4.0]));
    let params = TriggerParams {
        sigma: 0.1,
        h: 0.005,
        w_bound: 2.0,
    };
    PetcSystem::new(plant, ctrl, params).unwrap()
}

fn lifted() -> &'static LiftedDynamics {
    static CACHE: OnceLock<LiftedDynamics> = OnceLock::new();
    CACHE.get_or_init(|| LiftedDynamics::new(&example(), 400))
}

fn partition() -> &'static Partition {
    static P: OnceLock<Partition> = OnceLock::new();
    P.get_or_init(|| build_partition(2, 8, 6, &ShellRadii::Geometric { inner: 0.5, outer: 8.0 }).unwrap())
}

fn point() -> impl Strategy<Value = Point> {
    (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b)| [a, b])
}

fn nonzero_state() -> impl Strategy<Value = DVector<f64>> {
    (0.0..std::f64::consts::TAU, 0.01..20.0f64).prop_map(|(a, r)| DVector::from_row_slice(&[r * a.cos(), r * a.sin()]))
}

fn matrix2() -> impl Strategy<Value = Matrix2<f64>> {
    prop::array::uniform4(-3.0..3.0f64).prop_map(|m| Matrix2::new(m[0], m[1], m[2], m[3]))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn hull_contains_its_generators(pts in prop::collection::vec(point(), 3..25)) {
        let p = Polytope::from_points(&pts);
        prop_assert!(p.representations_agree());
        for &q in &pts {
            prop_assert!(p.contains(q, 1e-9));
        }
    }

    #[test]
    fn mapping_composes(pts in prop::collection::vec(point(), 3..12), a in matrix2(), b in matrix2()) {
        let p = Polytope::from_points(&pts);
        let twice = p.map(&a).map(&b);
        let once = p.map(&(b * a));
        let scale = 1.0 + once.max_norm();
        for &v in once.vertices() {
            prop_assert!(twice.distance(v) <= 1e-9 * scale);
        }
        for &v in twice.vertices() {
            prop_assert!(once.distance(v) <= 1e-9 * scale);
        }
    }

    #[test]
    fn ball_outer_polygon_covers_the_ball(pts in prop::collection::vec(point(), 3..10), r in 0.0..3.0f64, q in point()) {
        let ball = minkowski_ball(&Polytope::from_points(&pts), r);
        if ball.contains(q, 0.0) {
            prop_assert!(ball.outer_polytope(32).contains(q, 1e-9));
        }
    }

    #[test]
    fn classification_is_consistent(x in nonzero_state(), c in 0.05..5.0f64) {
        let p = partition();
        let id = p.classify(&x);
        prop_assert!(p.contains(id, &x));
        prop_assert_eq!(p.classify(&(-&x)), id);
        prop_assert_eq!(p.classify_cone(&(&x * c)), id.s1);
    }

    #[test]
    fn trigger_form_is_quadratic(x in nonzero_state(), x0 in nonzero_state(), c in 0.1..10.0f64) {
        let sys = example();
        let v = sys.trigger_value(&x, &x0);
        let scaled = sys.trigger_value(&(&x * c), &(&x0 * c));
        prop_assert!((scaled - c * c * v).abs() <= 1e-9 * (1.0 + (c * c * v).abs()));
    }

    #[test]
    fn event_time_is_scale_invariant(x in nonzero_state(), c in 0.1..10.0f64) {
        let dyn_ = lifted();
        prop_assert_eq!(exact_event_steps_w0(dyn_, &x, 400), exact_event_steps_w0(dyn_, &(&x * c), 400));
    }

    #[test]
    fn sig_rounding_is_stable(x in prop::num::f64::NORMAL) {
        let r = round_sig(x);
        prop_assert_eq!(round_sig(r), r);
        let back: f64 = serde_json::from_str(&to_stable_json(&r).unwrap()).unwrap();
        prop_assert_eq!(back, r);
        prop_assert!((r - x).abs() <= 1e-11 * x.abs());
    }

    #[test]
    fn random_disturbance_respects_its_cap(cap in 0.0..2.0f64, hold in 1usize..50, seed in any::<u64>()) {
        let spec = DisturbanceSpec::PiecewiseRandom { cap, hold_steps: hold, seed };
        let w = Disturbance::realize(&spec, 1, 0.005, 2.0, 2.0).unwrap();
        prop_assert!(w.sup_norm() <= cap * (1.0 + 1e-12));
    }
}
