//! Hard-negative grasps: small offsets of known-good grasps.

use grasptrack_core::se3::Pose;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeConfig {
    /// Offsets along each positive's approach axis.
    pub z_offsets: Vec<f64>,
    /// Offsets along each positive's closure and width axes.
    pub xy_offsets: Vec<f64>,
    /// Generated grasps closer than this to any positive are dropped.
    pub min_dist: f64,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            z_offsets: vec![-0.04, -0.02, 0.02, 0.04],
            xy_offsets: vec![-0.02, 0.02],
            min_dist: 0.01,
        }
    }
}

/// Every non-zero combination of one z, one x and one y offset (each may
/// also be zero), applied in each positive's own frame.
pub fn generate_hard_negatives(positives: &[Pose], z_offsets: &[f64], xy_offsets: &[f64], min_dist: f64) -> Vec<Pose> {
    assert!(min_dist > 0.0, "min_dist must be positive");
    let with_zero = |v: &[f64]| std::iter::once(0.0).chain(v.iter().copied().filter(|x| *x != 0.0)).collect::<Vec<_>>();
    let (zs, xys) = (with_zero(z_offsets), with_zero(xy_offsets));
    let mut out = Vec::new();
    for p in positives {
        for &dz in &zs {
            for &dx in &xys {
                for &dy in &xys {
                    if dx == 0.0 && dy == 0.0 && dz == 0.0 {
                        continue;
                    }
                    let g = *p * Pose::from_translation(Vector3::new(dx, dy, dz));
                    let clear = positives
                        .iter()
                        .all(|q| (g.translation() - q.translation()).norm() >= min_dist);
                    if clear {
                        out.push(g);
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

    #[test]
    fn empty_positives_give_nothing() {
        assert!(generate_hard_negatives(&[], &[0.02], &[0.02], 0.01).is_empty());
    }

    #[test]
    fn single_z_offset_moves_along_approach() {
        let p = Pose::translate(0.1, 0.2, 0.3) * Pose::rot_y(0.5);
        let n = generate_hard_negatives(&[p], &[0.04], &[], 0.01);
        assert_eq!(n.len(), 1);
        assert!((n[0].translation() - (p.translation() + 0.04 * p.z_axis())).norm() < 1e-15);
        assert_eq!(n[0].rotation(), p.rotation());
    }

    #[test]
    fn near_duplicates_of_positives_are_dropped() {
        let a = Pose::identity();
        let b = Pose::translate(0.0, 0.0, 0.042);
        let n = generate_hard_negatives(&[a, b], &[0.04], &[], 0.005);
        assert_eq!(n.len(), 1);
        assert!((n[0].translation().z - 0.082).abs() < 1e-12);
    }

    #[test]
    fn default_grid_size() {
        let c = NegativeConfig::default();
        let n = generate_hard_negatives(&[Pose::identity()], &c.z_offsets, &c.xy_offsets, c.min_dist);
        assert_eq!(n.len(), 5 * 3 * 3 - 1);
    }
}
