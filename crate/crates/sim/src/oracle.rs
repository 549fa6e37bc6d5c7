//! Ground-truth grasp adjudication and the oracle evaluator built on it.

use std::sync::RwLock;

use grasptrack_core::cloud::LABEL_SCENE;
use grasptrack_core::error::Result;
use grasptrack_core::evaluator::{EvalInput, Evaluator};
use grasptrack_core::gripper::{GraspBox, GripperModel};
use grasptrack_core::se3::Pose;
use nalgebra::Vector3;
use parry3d_f64::shape::Cuboid;
use serde::{Deserialize, Serialize};

use crate::scene::{isometry, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Friction-cone half-angle for antipodal contacts, radians.
    pub friction_angle: f64,
    /// Width of the quality taper inside the feasible set for distances.
    pub taper_distance: f64,
    /// Width of the quality taper for the contact angle, radians.
    pub taper_angle: f64,
    /// Ray rows across the finger width and along the finger length.
    pub rays_y: usize,
    pub rays_z: usize,
    /// Hits within this distance of the first touch form the contact patch.
    pub contact_band: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            friction_angle: 15f64.to_radians(),
            taper_distance: 0.005,
            taper_angle: 5f64.to_radians(),
            rays_y: 5,
            rays_z: 46,
            contact_band: 0.003,
        }
    }
}

/// Outcome of closing the gripper at a pose, with the margins behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub success: bool,
    /// Smallest distance between a gripper body and an object or the table;
    /// zero when touching or penetrating.
    pub clearance: f64,
    /// Extent of the shallower contact patch along the fingers.
    pub insertion: f64,
    /// Larger of the two contact-normal deviations from the closure axis.
    pub contact_angle: f64,
    /// Object held by both fingers, when they close on the same one.
    pub object: Option<u32>,
}

impl Adjudication {
    /// Quality in `[0, 1]`: positive exactly on successful grasps, ramping up
    /// to 1 as every margin clears its taper width.
    pub fn quality(&self, cfg: &OracleConfig) -> f64 {
        if !self.success {
            return 0.0;
        }
        let q = (self.clearance / cfg.taper_distance)
            .min(self.insertion / cfg.taper_distance)
            .min((cfg.friction_angle - self.contact_angle) / cfg.taper_angle);
        q.clamp(0.0, 1.0)
    }
}

pub fn adjudicate_grasp(scene: &Scene, grasp: &Pose, gripper: &GripperModel) -> Adjudication {
    adjudicate_with(scene, grasp, gripper, &OracleConfig::default())
}

pub fn adjudicate_with(scene: &Scene, grasp: &Pose, gripper: &GripperModel, cfg: &OracleConfig) -> Adjudication {
    let clearance = clearance(scene, grasp, gripper);
    let right = contact_patch(scene, grasp, gripper, cfg, 1.0);
    let left = contact_patch(scene, grasp, gripper, cfg, -1.0);
    let (insertion, contact_angle, object) = match (right, left) {
        (Some(r), Some(l)) if r.object == l.object => (r.extent.min(l.extent), r.angle.max(l.angle), Some(r.object)),
        _ => (0.0, std::f64::consts::PI, None),
    };
    let success = clearance > 0.0 && insertion > 0.0 && contact_angle < cfg.friction_angle && object.is_some();
    Adjudication {
        success,
        clearance,
        insertion,
        contact_angle,
        object,
    }
}

pub fn oracle_quality(scene: &Scene, grasp: &Pose, gripper: &GripperModel, cfg: &OracleConfig) -> f64 {
    adjudicate_with(scene, grasp, gripper, cfg).quality(cfg)
}

fn clearance(scene: &Scene, grasp: &Pose, gripper: &GripperModel) -> f64 {
    let mut best = f64::INFINITY;
    for b in gripper.collision_boxes() {
        let pose = *grasp * Pose::from_translation(b.center);
        let iso = isometry(&pose);
        let cuboid = Cuboid::new(b.half);
        let reach = b.half.norm();
        if let Some(h) = scene.table {
            let lowest = b
                .corners()
                .iter()
                .map(|c| grasp.transform_point(c).z)
                .fold(f64::INFINITY, f64::min);
            best = best.min((lowest - h).max(0.0));
        }
        for o in &scene.objects {
            let gap = (o.pose.translation() - pose.translation()).norm() - reach - o.shape.bounding_radius();
            if gap >= best {
                continue;
            }
            let shape = o.shape.parry_shape();
            let d = parry3d_f64::query::distance(&iso, &cuboid, &o.shape.parry_pose(&o.pose), shape.as_ref())
                .unwrap_or(0.0);
            best = best.min(d.max(0.0));
        }
    }
    best
}

struct Patch {
    object: u32,
    extent: f64,
    angle: f64,
}

/// Sweeps the finger on side `sign` toward the center and returns the
/// patch it first touches.
fn contact_patch(scene: &Scene, grasp: &Pose, gripper: &GripperModel, cfg: &OracleConfig, sign: f64) -> Option<Patch> {
    let pad: GraspBox = gripper.closing_region();
    let travel = gripper.max_opening;
    let dir = grasp.transform_vector(&Vector3::new(-sign, 0.0, 0.0));
    let closure = -dir;
    let mut hits: Vec<(f64, f64, Vector3<f64>, u32)> = Vec::new();
    let grid = |n: usize, lo: f64, hi: f64, i: usize| if n <= 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let (lo, hi) = (pad.min(), pad.max());
    for iy in 0..cfg.rays_y {
        let y = grid(cfg.rays_y, lo.y, hi.y, iy);
        for iz in 0..cfg.rays_z {
            let z = grid(cfg.rays_z, lo.z, hi.z, iz);
            let origin = grasp.transform_point(&Vector3::new(sign * gripper.half_opening(), y, z));
            if let Some(h) = scene.ray_cast(&origin, &dir, 0.0, false) {
                if h.t <= travel {
                    hits.push((h.t, z, h.normal, h.object.expect("objects only")));
                }
            }
        }
    }
    let first = hits.iter().min_by(|a, b| a.0.total_cmp(&b.0))?;
    let (t0, _, normal, object) = *first;
    let (zmin, zmax) = hits
        .iter()
        .filter(|h| h.0 <= t0 + cfg.contact_band && h.3 == object)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| (a.min(h.1), b.max(h.1)));
    Some(Patch {
        object,
        extent: zmax - zmin,
        angle: normal.dot(&closure).clamp(-1.0, 1.0).acos(),
    })
}

/// Evaluator that consults the ground-truth scene instead of the cloud.
///
/// The cloud only decides whether anything was observed: inputs without
/// scene points score zero. Consecutive inputs with the same pose (noise
/// replicas) are adjudicated once.
pub struct OracleEvaluator {
    scene: RwLock<Scene>,
    pub gripper: GripperModel,
    pub config: OracleConfig,
}

impl OracleEvaluator {
    pub fn new(scene: Scene, gripper: GripperModel) -> Self {
        Self {
            scene: RwLock::new(scene),
            gripper,
            config: OracleConfig::default(),
        }
    }

    pub fn set_scene(&self, scene: &Scene) {
        *self.scene.write().expect("scene lock") = scene.clone();
    }

    pub fn scene(&self) -> Scene {
        self.scene.read().expect("scene lock").clone()
    }
}

impl Evaluator for OracleEvaluator {
    fn quality(&self, batch: &[EvalInput]) -> Result<Vec<f64>> {
        let scene = self.scene.read().expect("scene lock");
        let mut out = Vec::with_capacity(batch.len());
        let mut last: Option<(Pose, f64)> = None;
        for item in batch {
            let q = match last {
                Some((p, q)) if p == item.grasp => q,
                _ => {
                    let q = oracle_quality(&scene, &item.grasp, &self.gripper, &self.config);
                    last = Some((item.grasp, q));
                    q
                }
            };
            let observed = (0..item.cloud.len()).any(|i| item.cloud.label(i) == LABEL_SCENE);
            out.push(if observed { q } else { 0.0 });
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "oracle"
    }
}
