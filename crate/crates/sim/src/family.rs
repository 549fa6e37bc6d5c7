//! Nearest feasible grasp by grid search over each primitive's grasp family.

use std::f64::consts::PI;

use grasptrack_core::error::{Error, Result};
use grasptrack_core::gripper::GripperModel;
use grasptrack_core::se3::{rotation_angle, translation_distance, Pose};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::oracle::{adjudicate_with, OracleConfig};
use crate::scene::{Primitive, Scene, SceneObject};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleQuery {
    /// Candidates farther than this from `near` are ignored.
    pub radius: f64,
    /// Candidates rotated more than this from `near` are ignored.
    pub max_rotation: f64,
    /// Meters of distance charged per radian of rotation when ranking.
    pub rotation_weight: f64,
    /// Minimum adjudicated quality for a candidate to count.
    pub min_quality: f64,
}

impl Default for OracleQuery {
    fn default() -> Self {
        Self {
            radius: 0.05,
            max_rotation: PI,
            rotation_weight: 0.01,
            min_quality: 0.0,
        }
    }
}

impl OracleQuery {
    pub fn within(radius: f64) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }

    pub fn distance(&self, a: &Pose, b: &Pose) -> f64 {
        translation_distance(a, b) + self.rotation_weight * rotation_angle(a, b)
    }
}

/// Successful grasp nearest `near` among the analytic grasp families of the
/// objects in reach.
pub fn oracle_best_grasp(scene: &Scene, near: &Pose, radius: f64, gripper: &GripperModel) -> Result<Pose> {
    oracle_best_grasp_with(scene, near, &OracleQuery::within(radius), gripper, &OracleConfig::default())
}

pub fn oracle_best_grasp_with(
    scene: &Scene,
    near: &Pose,
    query: &OracleQuery,
    gripper: &GripperModel,
    cfg: &OracleConfig,
) -> Result<Pose> {
    let mut cands: Vec<(f64, Pose)> = scene
        .objects
        .iter()
        .filter(|o| translation_distance(&o.pose, near) <= query.radius + o.shape.bounding_radius() + gripper.finger_length)
        .flat_map(|o| grasp_family(o, near, gripper))
        .filter(|g| translation_distance(g, near) <= query.radius && rotation_angle(g, near) <= query.max_rotation)
        .map(|g| (query.distance(&g, near), g))
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    cands
        .into_iter()
        .map(|(_, g)| g)
        .find(|g| {
            let a = adjudicate_with(scene, g, gripper, cfg);
            a.success && a.quality(cfg) > query.min_quality
        })
        .ok_or_else(|| Error::InvalidArgument("no feasible grasp within radius".into()))
}

/// Candidate grasps on one object: a fixed grid over the family parameters
/// plus the family member closest to `near` in each continuous parameter.
pub fn grasp_family(obj: &SceneObject, near: &Pose, gripper: &GripperModel) -> Vec<Pose> {
    let local_near = obj.pose.inverse() * *near;
    let local = match obj.shape {
        Primitive::Cylinder { radius, height } => cylinder_family(radius, height, &local_near, gripper),
        Primitive::Sphere { radius } => sphere_family(radius, &local_near, gripper),
        Primitive::Box { size } => box_family(size, &local_near, gripper),
    };
    local.into_iter().map(|g| obj.pose * g).collect()
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi < lo {
        return Vec::new();
    }
    let n = ((hi - lo) / step).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Grid values in `[lo, hi]` plus `hint` clamped into the interval.
fn with_hint(lo: f64, hi: f64, step: f64, hint: f64) -> Vec<f64> {
    let mut v = steps(lo, hi, step);
    if hi >= lo {
        v.push(hint.clamp(lo, hi));
    }
    v
}

/// Roll angles about the approach axis: grid plus the roll aligning the
/// closure axis with `near`'s, and its half-turn flip.
fn rolls(frame: &Pose, near: &Pose, step_deg: f64) -> Vec<f64> {
    let x = frame.inverse_transform_vector(&near.x_axis());
    let hint = x.y.atan2(x.x);
    let mut v: Vec<f64> = steps(0.0, 360.0 - step_deg, step_deg).into_iter().map(f64::to_radians).collect();
    v.push(hint);
    v.push(hint + PI);
    v
}

/// Frame with `z` along `approach` and `x` an arbitrary perpendicular.
fn approach_frame(approach: Vector3<f64>, origin: Vector3<f64>) -> Pose {
    let helper = if approach.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x = helper - approach * approach.dot(&helper);
    Pose::from_axes(x, approach, origin)
}

fn cylinder_family(r: f64, h: f64, near: &Pose, g: &GripperModel) -> Vec<Pose> {
    let mut out = Vec::new();
    let l = g.finger_length;
    // Cap grasps: approach along the axis, tips `depth` past the cap.
    if 2.0 * r < g.max_opening {
        for cap in [1.0, -1.0] {
            let frame = approach_frame(Vector3::new(0.0, 0.0, -cap), Vector3::zeros());
            let depth_hint = 0.5 * h - cap * near.translation().z;
            for depth in with_hint(0.005, (l - 0.005).min(h), 0.0025, depth_hint) {
                let origin = Vector3::new(0.0, 0.0, cap * (0.5 * h - depth));
                for psi in rolls(&frame, near, 5.0) {
                    out.push(frame.with_translation(origin) * Pose::rot_z(psi));
                }
            }
        }
    }
    // Side grasps: approach toward the axis, closing across the diameter.
    if 2.0 * r < g.max_opening {
        let p = near.translation();
        let mut phis: Vec<f64> = steps(0.0, 355.0, 5.0).into_iter().map(f64::to_radians).collect();
        phis.push((-p.y).atan2(-p.x));
        let heights = with_hint(-0.5 * h + 0.5 * g.finger_width, 0.5 * h - 0.5 * g.finger_width, 0.005, p.z);
        for phi in phis {
            let approach = Vector3::new(phi.cos(), phi.sin(), 0.0);
            let x = Vector3::z().cross(&approach);
            let along_hint = p.dot(&approach);
            for &z in &heights {
                // Tips past the axis by `s`, palm clear of the far side.
                for s in with_hint(0.002, l - r - 0.002, 0.002, along_hint) {
                    let origin = Vector3::new(0.0, 0.0, z) + approach * s;
                    let base = Pose::from_axes(x, approach, origin);
                    out.push(base);
                    out.push(base * Pose::rot_z(PI));
                }
            }
        }
    }
    out
}

fn sphere_family(r: f64, near: &Pose, g: &GripperModel) -> Vec<Pose> {
    let mut out = Vec::new();
    if 2.0 * r >= g.max_opening {
        return out;
    }
    let mut dirs = fibonacci_sphere(200);
    let to_center = -near.translation();
    if to_center.norm() > 1e-9 {
        dirs.push(to_center.normalize());
    }
    dirs.push(near.z_axis());
    let hi = g.finger_length - r - 0.002;
    for d in dirs {
        let frame = approach_frame(d, Vector3::zeros());
        let delta_hint = near.translation().dot(&d);
        for delta in with_hint(0.0, hi, 0.0025, delta_hint) {
            let origin = d * delta;
            for psi in rolls(&frame, near, 30.0) {
                out.push(frame.with_translation(origin) * Pose::rot_z(psi));
            }
        }
    }
    out
}

fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            Vector3::new(rho * th.cos(), rho * th.sin(), z)
        })
        .collect()
}

fn box_family(size: [f64; 3], near: &Pose, g: &GripperModel) -> Vec<Pose> {
    let mut out = Vec::new();
    let l = g.finger_length;
    let p = near.translation();
    for closure in 0..3 {
        if size[closure] >= g.max_opening {
            continue;
        }
        for approach_axis in (0..3).filter(|&a| a != closure) {
            let width_axis = 3 - closure - approach_axis;
            let half_a = 0.5 * size[approach_axis];
            let half_w = 0.5 * size[width_axis];
            let slide = with_hint(-half_w + 0.5 * g.finger_width, half_w - 0.5 * g.finger_width, 0.005, p[width_axis]);
            for sign in [1.0, -1.0] {
                let mut approach = Vector3::zeros();
                approach[approach_axis] = -sign;
                let mut x = Vector3::zeros();
                x[closure] = 1.0;
                let depth_hint = half_a - sign * p[approach_axis];
                for depth in with_hint(0.005, (l - 0.005).min(2.0 * half_a), 0.0025, depth_hint) {
                    for &s in &slide {
                        let mut origin = Vector3::zeros();
                        origin[approach_axis] = sign * (half_a - depth);
                        origin[width_axis] = s;
                        let base = Pose::from_axes(x, approach, origin);
                        out.push(base);
                        out.push(base * Pose::rot_z(PI));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::adjudicate_grasp;
    use crate::scene::resting;

    fn top_down(h: f64, depth: f64) -> Pose {
        Pose::translate(0.0, 0.0, h - depth) * Pose::rot_x(PI)
    }

    #[test]
    fn cylinder_top_down_seed_returns_axis_grasp() {
        let g = GripperModel::default();
        let scene = Scene::new(vec![resting(1, Primitive::Cylinder { radius: 0.03, height: 0.12 }, 0.0, 0.0, 0.0)]);
        let near = Pose::translate(0.004, -0.003, 0.0) * top_down(0.12, 0.02) * Pose::rot_z(0.2);
        let best = oracle_best_grasp(&scene, &near, 0.05, &g).unwrap();
        assert!(adjudicate_grasp(&scene, &best, &g).success);
        assert!(best.translation().xy().norm() < 1e-9);
        assert!((best.translation().z - 0.10).abs() < 1e-9);
        assert!(rotation_angle(&best, &near) < 1e-9);
    }

    #[test]
    fn sphere_grasp_passes_through_center_nearest_approach() {
        let g = GripperModel::default();
        let mut scene = Scene::new(vec![SceneObject {
            id: 1,
            shape: Primitive::Sphere { radius: 0.025 },
            pose: Pose::translate(0.0, 0.0, 0.3),
        }]);
        scene.table = None;
        let near = Pose::translate(0.0, 0.0, 0.3) * Pose::rot_y(0.7) * Pose::translate(0.0, 0.0, 0.005);
        let best = oracle_best_grasp(&scene, &near, 0.05, &g).unwrap();
        let a = adjudicate_grasp(&scene, &best, &g);
        assert!(a.success && a.contact_angle < 1e-6);
        let axis_offset = (best.translation() - Vector3::new(0.0, 0.0, 0.3)).cross(&best.z_axis()).norm();
        assert!(axis_offset < 1e-9);
        assert!(rotation_angle(&best, &near) < 1e-6);
    }

    #[test]
    fn box_closes_across_narrow_side() {
        let g = GripperModel::default();
        let scene = Scene::new(vec![resting(1, Primitive::Box { size: [0.12, 0.05, 0.10] }, 0.0, 0.0, 0.3)]);
        let near = Pose::translate(0.0, 0.0, 0.085) * Pose::rot_x(PI);
        let best = oracle_best_grasp(&scene, &near, 0.08, &g).unwrap();
        assert!(adjudicate_grasp(&scene, &best, &g).success);
        let narrow = scene.objects[0].pose.y_axis();
        assert!(best.x_axis().dot(&narrow).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn no_grasp_in_reach_is_an_error() {
        let g = GripperModel::default();
        let scene = Scene::new(vec![resting(1, Primitive::Cylinder { radius: 0.03, height: 0.12 }, 0.5, 0.0, 0.0)]);
        assert!(oracle_best_grasp(&scene, &top_down(0.12, 0.02), 0.05, &g).is_err());
        let fat = Scene::new(vec![resting(1, Primitive::Sphere { radius: 0.06 }, 0.0, 0.0, 0.0)]);
        assert!(oracle_best_grasp(&fat, &top_down(0.12, 0.02), 0.1, &g).is_err());
    }
}
