//! Experiment configuration, loaded from TOML.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Context, Result};
use grasptrack_core::evaluator::HeuristicConfig;
use grasptrack_core::tracker::TrackerConfig;
use grasptrack_sim::camera::CameraConfig;
use grasptrack_sim::negatives::NegativeConfig;
use grasptrack_sim::oracle::OracleConfig;
use grasptrack_sim::scene::{Primitive, SceneObject};
use grasptrack_core::se3::Pose;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Oracle,
    Heuristic,
    /// Address of a process serving the binary evaluator protocol.
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub evaluator: EvaluatorKind,
    pub tracker: TrackerConfig,
    pub camera: CameraConfig,
    pub oracle: OracleConfig,
    pub heuristic: HeuristicConfig,
    #[serde(rename = "static")]
    pub static_protocol: StaticProtocol,
    pub turntable: TurntableProtocol,
    pub handover: HandoverProtocol,
    pub bench: BenchProtocol,
    pub dataset: DatasetProtocol,
    pub bridge: BridgeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            evaluator: EvaluatorKind::Oracle,
            tracker: TrackerConfig::default(),
            camera: CameraConfig::default(),
            oracle: OracleConfig::default(),
            heuristic: HeuristicConfig::default(),
            static_protocol: StaticProtocol::default(),
            turntable: TurntableProtocol::default(),
            handover: HandoverProtocol::default(),
            bench: BenchProtocol::default(),
            dataset: DatasetProtocol::default(),
            bridge: BridgeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        if self.camera.width == 0 || self.camera.height == 0 || !(self.camera.fx > 0.0 && self.camera.fy > 0.0) {
            bail!("camera resolution and focal lengths must be positive");
        }
        if !(self.camera.near > 0.0 && self.camera.far > self.camera.near) {
            bail!("camera needs 0 < near < far");
        }
        let p = &self.static_protocol;
        if !(p.perturb_translation >= 0.0 && p.perturb_rotation_deg >= 0.0 && p.timeout > 0.0) {
            bail!("static perturbation and timeout must be non-negative");
        }
        let t = &self.turntable;
        if t.radii.iter().any(|r| !(*r >= 0.0)) || !(t.omega > 0.0) {
            bail!("turntable radii must be >= 0 and omega > 0");
        }
        if !(t.extent_min_deg > 0.0 && t.extent_max_deg >= t.extent_min_deg) {
            bail!("turntable extent range is empty");
        }
        if !(self.dataset.negatives.min_dist > 0.0) {
            bail!("dataset min_dist must be positive");
        }
        Ok(())
    }

    /// Digest of the fully resolved configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Object description: a primitive resting on the table, or at an explicit
/// pose when `position` is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Primitive,
    #[serde(default)]
    pub position: Option<[f64; 3]>,
    #[serde(default)]
    pub yaw_deg: f64,
}

impl ObjectSpec {
    pub fn place(&self, id: u32, x: f64, y: f64) -> SceneObject {
        let pose = match self.position {
            Some([px, py, pz]) => Pose::translate(px + x, py + y, pz),
            None => Pose::translate(x, y, self.shape.rest_height()),
        };
        SceneObject {
            id,
            shape: self.shape,
            pose: pose * Pose::rot_z(self.yaw_deg.to_radians()),
        }
    }
}

fn can() -> ObjectSpec {
    ObjectSpec {
        shape: Primitive::Cylinder {
            radius: 0.033,
            height: 0.12,
        },
        position: None,
        yaw_deg: 0.0,
    }
}

/// Seed perturbation: translation uniform in a ball, rotation about a
/// uniform axis by an angle uniform in `[0, perturb_rotation_deg]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub perturb_translation: f64,
    pub perturb_rotation_deg: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            perturb_translation: 0.015,
            perturb_rotation_deg: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticProtocol {
    pub trials: usize,
    pub objects: Vec<ObjectSpec>,
    pub perturb_translation: f64,
    pub perturb_rotation_deg: f64,
    /// Fingertip depth below the top of the object for the reference grasp.
    pub grasp_depth: f64,
    pub timeout: f64,
}

impl Default for StaticProtocol {
    fn default() -> Self {
        let p = Perturbation::default();
        Self {
            trials: 100,
            objects: vec![can()],
            perturb_translation: p.perturb_translation,
            perturb_rotation_deg: p.perturb_rotation_deg,
            grasp_depth: 0.02,
            timeout: 20.0,
        }
    }
}

impl StaticProtocol {
    pub fn perturbation(&self) -> Perturbation {
        Perturbation {
            perturb_translation: self.perturb_translation,
            perturb_rotation_deg: self.perturb_rotation_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurntableProtocol {
    pub trials: usize,
    pub object: ObjectSpec,
    pub radii: Vec<f64>,
    pub omega: f64,
    pub extent_min_deg: f64,
    pub extent_max_deg: f64,
    /// Tracking time before the turntable starts.
    pub start_delay: f64,
    /// Time allowed after the turntable stops.
    pub settle_timeout: f64,
    pub perturb_translation: f64,
    pub perturb_rotation_deg: f64,
    pub grasp_depth: f64,
    /// Arms to run: adaptive sampling on and off.
    pub arms: Vec<bool>,
}

impl Default for TurntableProtocol {
    fn default() -> Self {
        Self {
            trials: 40,
            object: can(),
            radii: vec![0.06, 0.10, 0.14],
            omega: 2.0 * PI / 10.0,
            extent_min_deg: 60.0,
            extent_max_deg: 120.0,
            start_delay: 0.5,
            settle_timeout: 10.0,
            perturb_translation: 0.005,
            perturb_rotation_deg: 3.0,
            grasp_depth: 0.02,
            arms: vec![true, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandoverProtocol {
    pub trials: usize,
    pub object: ObjectSpec,
    /// Tool pose the robot waits at, `[x, y, z, roll, pitch, yaw]` in meters and degrees.
    pub tool: [f64; 6],
    pub speed_max: f64,
    pub rot_max: f64,
    /// Time for the object to enter the initialization region.
    pub init_timeout: f64,
    /// Time allowed from entering tracking to closing the gripper.
    pub track_timeout: f64,
    /// Start offset of the object from the handover seed, meters.
    pub start_offset: f64,
}

impl Default for HandoverProtocol {
    fn default() -> Self {
        Self {
            trials: 20,
            object: ObjectSpec {
                shape: Primitive::Cylinder {
                    radius: 0.03,
                    height: 0.10,
                },
                position: Some([0.0, 0.0, 0.0]),
                yaw_deg: 0.0,
            },
            tool: [0.0, 0.0, 0.45, 180.0, 0.0, 0.0],
            speed_max: 0.02,
            rot_max: 0.2,
            init_timeout: 10.0,
            track_timeout: 20.0,
            start_offset: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchProtocol {
    pub steps: usize,
    pub warmup: usize,
    pub n: usize,
    pub k: usize,
    pub cloud_points: usize,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        Self {
            steps: 500,
            warmup: 10,
            n: 200,
            k: 5,
            cloud_points: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetProtocol {
    pub scenes: usize,
    pub objects: Vec<ObjectSpec>,
    pub positives_per_scene: usize,
    pub negatives: NegativeConfig,
    /// View distance of the camera above the grasp.
    pub view_distance: f64,
}

impl Default for DatasetProtocol {
    fn default() -> Self {
        Self {
            scenes: 4,
            objects: vec![can()],
            positives_per_scene: 8,
            negatives: NegativeConfig::default(),
            view_distance: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeConfig {
    pub address: String,
    /// Snapshots buffered for a slow client before the oldest are dropped.
    pub queue: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            address: "127.0.0.1:8765".into(),
            queue: 64,
        }
    }
}
