//! Wrist depth camera: analytic rendering and exact optical flow.

use std::collections::VecDeque;

use grasptrack_core::error::{Error, Result};
use grasptrack_core::flow::{check_resolution, DepthFrame, FlowField, FlowProvider, Intrinsics};
use grasptrack_core::se3::Pose;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub near: f64,
    pub far: f64,
    /// Camera position in the tool frame.
    pub mount_position: [f64; 3],
    /// Tool-frame point the optical axis passes through.
    pub look_at: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            fx: 120.0,
            fy: 120.0,
            near: 0.07,
            far: 0.50,
            mount_position: [0.0, 0.05, -0.07],
            look_at: [0.0, 0.0, 0.10],
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: 0.5 * (self.width as f64 - 1.0),
            cy: 0.5 * (self.height as f64 - 1.0),
        }
    }

    /// Camera in the tool frame: optical `x` along the tool `x`, optical `z`
    /// through `look_at`.
    pub fn mount(&self) -> Pose {
        let eye = Vector3::from(self.mount_position);
        let z = Vector3::from(self.look_at) - eye;
        Pose::from_axes(Vector3::x(), z, eye)
    }

    pub fn pose_in_world(&self, tool: &Pose) -> Pose {
        *tool * self.mount()
    }
}

/// What a pixel sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelSource {
    Empty,
    Table,
    Object(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub frame: DepthFrame,
    /// World-frame surface normals; zero where nothing valid was hit.
    pub normals: Vec<Vector3<f64>>,
    pub sources: Vec<PixelSource>,
}

/// Ray casts every pixel center against the scene. Depth is the camera-frame
/// `z` of the hit; hits outside `[near, far]` are invalid.
pub fn render_depth(scene: &Scene, camera_pose: &Pose, cfg: &CameraConfig, timestamp: f64) -> Render {
    let k = cfg.intrinsics();
    let n = cfg.width * cfg.height;
    let mut depth = vec![0.0; n];
    let mut normals = vec![Vector3::zeros(); n];
    let mut sources = vec![PixelSource::Empty; n];
    let origin = *camera_pose.translation();
    for v in 0..cfg.height {
        for u in 0..cfg.width {
            let ray_cam = k.ray(u as f64, v as f64);
            let dir = camera_pose.transform_vector(&ray_cam);
            let Some(hit) = scene.ray_cast(&origin, &dir, 0.0, true) else { continue };
            let d = hit.t * ray_cam.z;
            if d < cfg.near || d > cfg.far {
                continue;
            }
            let i = v * cfg.width + u;
            depth[i] = d;
            normals[i] = hit.normal;
            sources[i] = hit.object.map_or(PixelSource::Table, PixelSource::Object);
        }
    }
    Render {
        frame: DepthFrame {
            width: cfg.width,
            height: cfg.height,
            depth,
            intrinsics: k,
            timestamp,
            camera_pose: *camera_pose,
        },
        normals,
        sources,
    }
}

/// Exact flow from `prev` to `next` implied by the object motion between the
/// two scenes and the two camera poses.
///
/// Pixels whose surface point becomes occluded or leaves the front of the
/// camera get NaN flow. Pixels with no valid depth get zero flow.
pub fn ground_truth_flow(prev_scene: &Scene, next_scene: &Scene, prev: &DepthFrame, next: &DepthFrame) -> Result<FlowField> {
    check_resolution(prev, next)?;
    let mut flow = FlowField::zeros(prev.width, prev.height);
    let eye = *next.camera_pose.translation();
    for v in 0..prev.height {
        for u in 0..prev.width {
            let Some(d) = prev.at(u, v) else { continue };
            let p = prev
                .camera_pose
                .transform_point(&prev.intrinsics.backproject(u as f64, v as f64, d));
            let Some(moved) = follow_point(prev_scene, next_scene, &p) else {
                flow.data[v * prev.width + u] = [f64::NAN; 2];
                continue;
            };
            let pc = next.camera_pose.inverse_transform_point(&moved);
            let visible = pc.z > 1e-9 && {
                let to = moved - eye;
                let dist = to.norm();
                next_scene
                    .ray_cast(&eye, &(to / dist), 0.0, true)
                    .is_none_or(|h| h.t >= dist - 1e-7)
            };
            flow.data[v * prev.width + u] = if visible {
                let (u1, v1) = next.intrinsics.project(&pc);
                [u1 - u as f64, v1 - v as f64]
            } else {
                [f64::NAN; 2]
            };
        }
    }
    Ok(flow)
}

/// Carries a surface point through the scene change: object points follow
/// their object, table points stay put.
fn follow_point(prev: &Scene, next: &Scene, p: &Vector3<f64>) -> Option<Vector3<f64>> {
    let owner = prev
        .objects
        .iter()
        .map(|o| (o, o.signed_distance(p).abs()))
        .filter(|(_, d)| *d < 1e-6)
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match owner {
        Some((o, _)) => {
            let after = next.object(o.id)?;
            Some(after.pose.transform_point(&o.pose.inverse_transform_point(p)))
        }
        None => Some(*p),
    }
}

/// Flow provider backed by recorded ground-truth scenes.
///
/// The driver records the scene for each timestamp it renders; flow between
/// two frames is then computed exactly from the recorded scenes.
#[derive(Debug, Clone, Default)]
pub struct SyntheticFlowProvider {
    history: VecDeque<(f64, Scene)>,
}

const HISTORY: usize = 4;

impl SyntheticFlowProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, timestamp: f64, scene: &Scene) {
        self.history.push_back((timestamp, scene.clone()));
        while self.history.len() > HISTORY {
            self.history.pop_front();
        }
    }

    fn scene_at(&self, t: f64) -> Result<&Scene> {
        self.history
            .iter()
            .find(|(ts, _)| (ts - t).abs() < 1e-9)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::InvalidArgument(format!("no recorded scene at t={t}")))
    }
}

impl FlowProvider for SyntheticFlowProvider {
    fn flow2d(&mut self, prev: &DepthFrame, next: &DepthFrame) -> Result<FlowField> {
        ground_truth_flow(self.scene_at(prev.timestamp)?, self.scene_at(next.timestamp)?, prev, next)
    }
}
