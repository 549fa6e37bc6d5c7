use std::f64::consts::PI;

use grasptrack_core::gripper::GripperModel;
use grasptrack_core::se3::Pose;
use grasptrack_sim::motion::{script_transform, step_scene, MotionScript};
use grasptrack_sim::oracle::{adjudicate_with, oracle_quality, OracleConfig};
use grasptrack_sim::scene::{resting, Primitive, Scene};
use nalgebra::Vector3;
use proptest::prelude::*;

fn can() -> Scene {
    let mut s = Scene::new(vec![resting(1, Primitive::Cylinder { radius: 0.033, height: 0.12 }, 0.0, 0.0, 0.0)]);
    s.table = None;
    s
}

fn rigid() -> impl Strategy<Value = Pose> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 0.0..PI).prop_map(
        |(x, y, z, (ax, ay, az), angle)| {
            let axis = Vector3::new(ax, ay, az);
            let axis = if axis.norm() < 1e-3 { Vector3::x() } else { axis };
            Pose::translate(x, y, z) * Pose::from_axis_angle(axis, angle)
        },
    )
}

/// Top-down grasps near the can axis, fingertips between 1 and 5 cm below the top.
fn grasp() -> impl Strategy<Value = Pose> {
    (-0.01..0.01f64, -0.01..0.01f64, 0.01..0.05f64, 0.0..2.0 * PI, -0.3..0.3f64).prop_map(|(x, y, depth, roll, tilt)| {
        Pose::translate(x, y, 0.12 - depth) * Pose::rot_x(PI) * Pose::rot_y(tilt) * Pose::rot_z(roll)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_is_rigidly_equivariant(g in grasp(), t in rigid()) {
        let gripper = GripperModel::default();
        let cfg = OracleConfig::default();
        let scene = can();
        let moved = scene.transformed(&t);
        let a = oracle_quality(&scene, &g, &gripper, &cfg);
        let b = oracle_quality(&moved, &(t * g), &gripper, &cfg);
        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        if a > 1e-6 && b > 1e-6 {
            prop_assert!(adjudicate_with(&moved, &(t * g), &gripper, &cfg).success);
        }
    }

    #[test]
    fn turntable_point_speed_is_radius_times_omega(
        radius in 0.05..0.3f64,
        omega in 0.1..2.0f64,
        extent in 0.5..3.0f64,
        forward in any::<bool>(),
        frac in 0.05..0.95f64,
    ) {
        let script = MotionScript::Turntable {
            radius,
            omega,
            extent,
            direction: if forward { 1.0 } else { -1.0 },
            center: [0.0, 0.0],
            start: 0.5,
        };
        let scene = Scene::new(vec![resting(1, Primitive::Sphere { radius: 0.03 }, radius, 0.0, 0.0)]);
        let t = 0.5 + frac * extent / omega;
        let h = 1e-6;
        let p = |t: f64| *step_scene(&scene, &script, t).objects[0].pose.translation();
        let speed = (p(t + h) - p(t - h)).norm() / (2.0 * h);
        prop_assert!((speed - radius * omega).abs() < 1e-6 * radius * omega.max(1.0), "{} vs {}", speed, radius * omega);
        prop_assert!((script.nominal_speed() - radius * omega).abs() < 1e-15);
        let settle = script.settle_time().unwrap();
        prop_assert_eq!(script_transform(&script, settle + 1e-9), script_transform(&script, settle + 1.0));
        prop_assert_eq!(script_transform(&script, 0.0), Pose::identity());
    }

    #[test]
    fn turntable_keeps_distance_to_axis(radius in 0.05..0.3f64, t in 0.0..10.0f64) {
        let script = MotionScript::Turntable {
            radius,
            omega: 0.8,
            extent: 2.0,
            direction: 1.0,
            center: [0.0, 0.0],
            start: 0.0,
        };
        let scene = Scene::new(vec![resting(1, Primitive::Sphere { radius: 0.03 }, radius, 0.0, 0.0)]);
        let p = *step_scene(&scene, &script, t).objects[0].pose.translation();
        prop_assert!((p.xy().norm() - radius).abs() < 1e-12);
        prop_assert!((p.z - 0.03).abs() < 1e-12);
    }

    #[test]
    fn linear_motion_is_exact(v in (-0.1..0.1f64, -0.1..0.1f64), t in 0.0..5.0f64) {
        let script = MotionScript::Linear { velocity: [v.0, v.1, 0.0], start: 1.0, duration: Some(2.0) };
        let d = *script_transform(&script, t).translation();
        let elapsed = (t - 1.0).clamp(0.0, 2.0);
        prop_assert!((d - Vector3::new(v.0, v.1, 0.0) * elapsed).norm() < 1e-15);
    }
}
