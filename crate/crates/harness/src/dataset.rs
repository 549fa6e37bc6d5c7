//! Grasp dataset export: per-grasp PLY crops plus a JSONL index.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use grasptrack_core::cloud::{crop_to_grasp_frame, LABEL_SCENE};
use grasptrack_core::ply::write_ply;
use grasptrack_core::rng::{self, derive_seed};
use grasptrack_core::se3::Pose;
use grasptrack_core::tracker::pre_grasp_of;
use grasptrack_sim::camera::render_depth;
use grasptrack_sim::family::{oracle_best_grasp_with, OracleQuery};
use grasptrack_sim::negatives::generate_hard_negatives;
use grasptrack_sim::oracle::adjudicate_with;
use grasptrack_sim::scene::{Primitive, Scene};
use rand::RngExt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

const DATASET_STREAM: u64 = 0x4453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    HardNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Path of the grasp-frame PLY crop, relative to the dataset root.
    pub cloud: String,
    /// World-frame grasp, `[x, y, z, qw, qx, qy, qz]`.
    pub pose: Pose,
    pub label: Label,
    pub scene: usize,
    pub object: Primitive,
    /// What the oracle says about the grasp; hard negatives are labeled by
    /// construction and may occasionally still be feasible.
    pub oracle_success: bool,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub entries: Vec<DatasetEntry>,
    /// SHA-256 of the index and of every cloud file, in index order.
    pub digest: String,
}

/// Random tilted top-down approach above the object center.
fn random_near(obj_center: &nalgebra::Vector3<f64>, top: f64, r: &mut rng::Rng) -> Pose {
    let roll = r.random_range(0.0..std::f64::consts::TAU);
    let tilt = r.random_range(0.0..0.5);
    let heading = r.random_range(0.0..std::f64::consts::TAU);
    let depth = r.random_range(0.01..0.04);
    Pose::translate(obj_center.x, obj_center.y, top - depth)
        * Pose::rot_z(heading)
        * Pose::rot_y(tilt)
        * Pose::rot_x(std::f64::consts::PI)
        * Pose::rot_z(roll)
}

/// Writes `clouds/*.ply` and `index.jsonl` under `dir`.
pub fn gen_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetSummary> {
    let d = &cfg.dataset;
    fs::create_dir_all(dir.join("clouds")).with_context(|| format!("creating {}", dir.display()))?;
    let base = derive_seed(cfg.seed, DATASET_STREAM);
    let gripper = cfg.tracker.gripper;
    let crop = cfg.tracker.evaluator.crop;
    let mut entries = Vec::new();
    let mut hasher = Sha256::new();
    let mut index = Vec::new();
    for s in 0..d.scenes {
        if d.objects.is_empty() {
            break;
        }
        let mut r = rng::rng_from_seed(derive_seed(base, s as u64));
        let mut spec = d.objects[s % d.objects.len()];
        spec.yaw_deg = r.random_range(0.0..360.0);
        let obj = spec.place(1, 0.0, 0.0);
        let scene = Scene::new(vec![obj]);
        let top = obj.pose.translation().z + obj.shape.rest_height();
        let mut positives: Vec<Pose> = Vec::new();
        for _ in 0..d.positives_per_scene * 20 {
            if positives.len() >= d.positives_per_scene {
                break;
            }
            let near = random_near(obj.pose.translation(), top, &mut r);
            let Ok(g) = oracle_best_grasp_with(&scene, &near, &OracleQuery::within(0.05), &gripper, &cfg.oracle) else {
                continue;
            };
            if positives.iter().all(|p| (p.translation() - g.translation()).norm() >= d.negatives.min_dist * 0.5
                || grasptrack_core::se3::rotation_angle(p, &g) > 0.2)
            {
                positives.push(g);
            }
        }
        let n = &d.negatives;
        let negatives = generate_hard_negatives(&positives, &n.z_offsets, &n.xy_offsets, n.min_dist);
        let labeled = positives
            .iter()
            .map(|p| (*p, Label::Positive))
            .chain(negatives.iter().map(|p| (*p, Label::HardNegative)));
        for (i, (grasp, label)) in labeled.enumerate() {
            let tool = pre_grasp_of(&grasp, d.view_distance);
            let render = render_depth(&scene, &cfg.camera.pose_in_world(&tool), &cfg.camera, 0.0);
            let world = render.frame.to_cloud(grasp.translation(), crop.bounding_radius(), cfg.tracker.cloud.max_points);
            let mut local = crop_to_grasp_frame(&world, &grasp, &crop);
            local.set_labels(LABEL_SCENE);
            let rel = format!("clouds/s{s:03}_{i:04}.ply");
            let mut bytes = Vec::new();
            write_ply(&mut bytes, &local)?;
            fs::write(dir.join(&rel), &bytes)?;
            hasher.update(&bytes);
            let entry = DatasetEntry {
                cloud: rel,
                pose: grasp,
                label,
                scene: s,
                object: obj.shape,
                oracle_success: adjudicate_with(&scene, &grasp, &gripper, &cfg.oracle).success,
                points: local.len(),
            };
            serde_json::to_writer(&mut index, &entry)?;
            index.push(b'\n');
            entries.push(entry);
        }
    }
    let mut f = fs::File::create(dir.join("index.jsonl"))?;
    f.write_all(&index)?;
    hasher.update(&index);
    Ok(DatasetSummary {
        entries,
        digest: hex::encode(hasher.finalize()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use grasptrack_core::ply::load_ply;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.scenes = 2;
        cfg.dataset.positives_per_scene = 2;
        cfg
    }

    #[test]
    fn index_points_at_clouds_with_both_labels() {
        let dir = tempfile::tempdir().unwrap();
        let out = gen_dataset(&small(), dir.path()).unwrap();
        let index = fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
        assert_eq!(index.lines().count(), out.entries.len());
        let parsed: Vec<DatasetEntry> = index.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        for (a, b) in parsed.iter().zip(&out.entries) {
            assert_eq!((&a.cloud, a.label, a.points), (&b.cloud, b.label, b.points));
            assert!(grasptrack_core::se3::translation_distance(&a.pose, &b.pose) < 1e-12);
        }
        assert!(parsed.iter().any(|e| e.label == Label::Positive));
        assert!(parsed.iter().any(|e| e.label == Label::HardNegative));
        for e in &parsed {
            let cloud = load_ply(dir.path().join(&e.cloud)).unwrap();
            assert_eq!(cloud.len(), e.points);
            if e.label == Label::Positive {
                assert!(e.oracle_success);
                assert!(e.points > 0);
            }
        }
    }

    #[test]
    fn same_seed_same_digest() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = gen_dataset(&small(), a.path()).unwrap().digest;
        let db = gen_dataset(&small(), b.path()).unwrap().digest;
        assert_eq!(da, db);
        let mut other = small();
        other.seed = 1;
        let c = tempfile::tempdir().unwrap();
        assert_ne!(gen_dataset(&other, c.path()).unwrap().digest, da);
    }
}
