use serde::{Deserialize, Serialize};

use super::{EvalInput, Evaluator};
use crate::cloud::LABEL_SCENE;
use crate::error::Result;
use crate::gripper::GripperModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    pub gripper: GripperModel,
    /// Closing-region points needed for full coverage credit.
    pub target_points: usize,
    /// Points deeper than this inside a finger sweep count as collisions.
    pub sweep_margin: f64,
    /// Collision count that scales the sweep factor by `1/e`.
    pub sweep_softness: f64,
    /// Points within this distance of the outermost point on a side form
    /// that finger's contact patch.
    pub contact_band: f64,
    /// A patch point is antipodal when its normal is within this angle of the finger.
    pub antipodal_angle: f64,
    /// Patch points whose normal has a smaller component toward the finger
    /// say nothing about that contact.
    pub facing_min: f64,
    /// Credit for a finger side with no visible facing points.
    pub hidden_side_prior: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            gripper: GripperModel::default(),
            target_points: 20,
            sweep_margin: 0.001,
            sweep_softness: 4.0,
            contact_band: 0.003,
            antipodal_angle: 30f64.to_radians(),
            facing_min: 0.3,
            hidden_side_prior: 0.8,
        }
    }
}

/// Geometric grasp score computed from the labeled cloud alone.
///
/// The score is the product of three factors: coverage of the closing region,
/// a soft penalty for scene points in the volumes the fingers sweep on
/// approach or inside the palm, and how well the normals in each finger's contact patch oppose
/// that finger. A side with no visible facing normals gets a fixed prior.
#[derive(Debug, Clone, Default)]
pub struct HeuristicCloudEvaluator {
    pub config: HeuristicConfig,
}

impl HeuristicCloudEvaluator {
    pub fn new(config: HeuristicConfig) -> Self {
        Self { config }
    }

    pub fn score(&self, input: &EvalInput) -> f64 {
        let c = &self.config;
        let g = &c.gripper;
        let cloud = &input.cloud;
        let closing = g.closing_region();
        let half_w = 0.5 * g.finger_width;
        let inner = g.half_opening() + c.sweep_margin;
        let outer = g.half_opening() + g.finger_thickness - c.sweep_margin;
        let palm = g.palm_box().inflated(-c.sweep_margin);
        let cos_max = c.antipodal_angle.cos();

        let mut n_sweep = 0usize;
        let mut closing_idx = Vec::new();
        for i in 0..cloud.len() {
            if cloud.label(i) != LABEL_SCENE {
                continue;
            }
            let p = &cloud.points[i];
            // Fingers travel along +z on approach, so everything in their
            // footprint up to the fingertips is swept.
            let in_finger = p.z <= 0.0 && p.y.abs() < half_w - c.sweep_margin && p.x.abs() > inner && p.x.abs() < outer;
            if in_finger || palm.contains(p) {
                n_sweep += 1;
            }
            if closing.contains(p) {
                closing_idx.push(i);
            }
        }
        let n_closing = closing_idx.len();
        if n_closing == 0 {
            return 0.0;
        }
        let side_credit = |sign: f64| {
            let Some(normals) = &cloud.normals else {
                return c.hidden_side_prior;
            };
            // Closed fingers touch the outermost points on their side first.
            let extreme = closing_idx
                .iter()
                .map(|&i| sign * cloud.points[i].x)
                .fold(f64::NEG_INFINITY, f64::max);
            let (mut facing, mut good) = (0usize, 0usize);
            for &i in &closing_idx {
                if sign * cloud.points[i].x < extreme - c.contact_band {
                    continue;
                }
                let toward = sign * normals[i].x;
                if toward >= c.facing_min {
                    facing += 1;
                    if toward >= cos_max {
                        good += 1;
                    }
                }
            }
            if facing == 0 {
                c.hidden_side_prior
            } else {
                good as f64 / facing as f64
            }
        };
        let antipodal = 0.5 * (side_credit(1.0) + side_credit(-1.0));
        let coverage = (n_closing as f64 / c.target_points.max(1) as f64).min(1.0);
        let sweep = (-(n_sweep as f64) / c.sweep_softness).exp();
        (coverage * sweep * antipodal).clamp(0.0, 1.0)
    }
}

impl Evaluator for HeuristicCloudEvaluator {
    fn quality(&self, batch: &[EvalInput]) -> Result<Vec<f64>> {
        Ok(batch.iter().map(|b| self.score(b)).collect())
    }

    fn name(&self) -> &str {
        "heuristic"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{merge_labeled, PointCloud};
    use crate::gripper::gripper_cloud;
    use crate::se3::Pose;
    use nalgebra::Vector3;

    fn input(scene: PointCloud) -> EvalInput {
        let g = gripper_cloud(&GripperModel::default(), 16);
        EvalInput {
            cloud: merge_labeled(&scene, &g).unwrap(),
            grasp: Pose::identity(),
        }
    }

    /// Two opposed walls at x = ±w with outward normals, inside the closing region.
    fn walls(w: f64) -> PointCloud {
        let mut pts = Vec::new();
        let mut ns = Vec::new();
        for s in [1.0, -1.0] {
            for iy in 0..5 {
                for iz in 0..6 {
                    pts.push(Vector3::new(s * w, -0.008 + 0.004 * iy as f64, -0.04 + 0.007 * iz as f64));
                    ns.push(Vector3::new(s, 0.0, 0.0));
                }
            }
        }
        PointCloud::with_normals(pts, ns).unwrap()
    }

    #[test]
    fn empty_crop_scores_zero() {
        let ev = HeuristicCloudEvaluator::default();
        assert_eq!(ev.score(&input(PointCloud::default())), 0.0);
    }

    #[test]
    fn antipodal_walls_score_one() {
        let ev = HeuristicCloudEvaluator::default();
        assert!((ev.score(&input(walls(0.02))) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swept_points_lower_the_score() {
        let ev = HeuristicCloudEvaluator::default();
        let mut scene = walls(0.02);
        let clear = ev.score(&input(scene.clone()));
        scene.points.extend((0..8).map(|i| Vector3::new(0.045, 0.0, -0.05 - 0.001 * i as f64)));
        scene.normals.as_mut().unwrap().extend(std::iter::repeat(Vector3::z()).take(8));
        let hit = ev.score(&input(scene));
        assert!(hit < 0.2 * clear);
    }

    #[test]
    fn palm_contact_lowers_the_score() {
        let ev = HeuristicCloudEvaluator::default();
        let mut scene = walls(0.02);
        let clear = ev.score(&input(scene.clone()));
        scene.points.extend((0..8).map(|i| Vector3::new(-0.01 + 0.0025 * i as f64, 0.0, -0.055)));
        scene.normals.as_mut().unwrap().extend(std::iter::repeat(Vector3::z()).take(8));
        assert!(ev.score(&input(scene)) < 0.2 * clear);
    }

    #[test]
    fn cap_normals_fall_back_to_prior() {
        let ev = HeuristicCloudEvaluator::default();
        let mut scene = walls(0.02);
        for n in scene.normals.as_mut().unwrap() {
            *n = Vector3::new(1e-17, 0.0, -1.0);
        }
        assert!((ev.score(&input(scene)) - ev.config.hidden_side_prior).abs() < 1e-12);
    }

    #[test]
    fn tangential_normals_fail_antipodality() {
        let ev = HeuristicCloudEvaluator::default();
        let mut scene = walls(0.02);
        for n in scene.normals.as_mut().unwrap() {
            *n = Vector3::new(n.x * 0.5, 0.75f64.sqrt(), 0.0);
        }
        assert!(ev.score(&input(scene)) < 1e-12);
    }

    #[test]
    fn gripper_points_are_ignored() {
        let ev = HeuristicCloudEvaluator::default();
        let only_gripper = input(PointCloud::default());
        assert!(only_gripper.cloud.len() > 0);
        assert_eq!(ev.quality(&[only_gripper]).unwrap(), vec![0.0]);
    }
}
