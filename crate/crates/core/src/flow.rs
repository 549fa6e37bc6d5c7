//! Depth frames, optical flow lifting and the flow-based seed offset.
//!
//! Camera frames use the optical convention: `x` right, `y` down, `z` along
//! the viewing direction. Depth is the camera-frame `z` of the surface point.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Neighbouring depths that differ by more than this straddle an occlusion
/// edge and are not interpolated across.
pub const EDGE_DEPTH_JUMP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy)
    }

    /// Camera-frame point seen at pixel coordinates `(u, v)` with depth `d`.
    pub fn backproject(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }

    /// Unit ray through `(u, v)` in the camera frame.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.backproject(u, v, 1.0).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major; `0` or non-finite marks an invalid pixel.
    pub depth: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub timestamp: f64,
    /// Camera in the world frame.
    pub camera_pose: Pose,
}

impl DepthFrame {
    pub fn validate(&self) -> Result<()> {
        if self.depth.len() != self.width * self.height {
            return Err(Error::LengthMismatch {
                what: "depth",
                expected: self.width * self.height,
                got: self.depth.len(),
            });
        }
        if !(self.intrinsics.fx > 0.0 && self.intrinsics.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth[v * self.width + u];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite() && **d > 0.0).count()
    }

    /// World point at pixel `(u, v)`, if its depth is valid.
    pub fn world_point(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        self.at(u, v).map(|d| {
            self.camera_pose
                .transform_point(&self.intrinsics.backproject(u as f64, v as f64, d))
        })
    }

    /// Depth at sub-pixel `(u, v)`, interpolating inverse depth bilinearly.
    ///
    /// Inverse depth is affine in the image for planar surfaces, so planes are
    /// reproduced exactly. Returns `None` outside the image, next to invalid
    /// pixels or across occlusion edges.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        if u0 >= self.width || v0 >= self.height {
            return None;
        }
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let d = [self.at(u0, v0)?, self.at(u1, v0)?, self.at(u0, v1)?, self.at(u1, v1)?];
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if hi - lo > EDGE_DEPTH_JUMP {
            return None;
        }
        let (a, b) = (u - u0 as f64, v - v0 as f64);
        let inv = (1.0 - a) * (1.0 - b) / d[0] + a * (1.0 - b) / d[1] + (1.0 - a) * b / d[2] + a * b / d[3];
        Some(1.0 / inv)
    }

    /// Valid pixels as a world-frame point list.
    pub fn to_world_points(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(self.valid_count());
        for v in 0..self.height {
            for u in 0..self.width {
                if let Some(p) = self.world_point(u, v) {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Valid pixels within `radius` of `center`, as a world-frame cloud with
    /// normals estimated from neighbouring pixels and oriented toward the
    /// camera. Keeps `max_points` evenly spaced points when over budget.
    pub fn to_cloud(&self, center: &Vector3<f64>, radius: f64, max_points: usize) -> PointCloud {
        let r2 = radius * radius;
        let eye = *self.camera_pose.translation();
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for v in 0..self.height {
            for u in 0..self.width {
                let Some(p) = self.world_point(u, v) else { continue };
                if (p - center).norm_squared() > r2 {
                    continue;
                }
                let to_eye = eye - p;
                let n = self.estimate_normal(u, v, &p).unwrap_or(to_eye);
                let n = if n.dot(&to_eye) < 0.0 { -n } else { n };
                points.push(p);
                normals.push(n.normalize());
            }
        }
        if max_points > 0 && points.len() > max_points {
            let n = points.len();
            let keep: Vec<usize> = (0..max_points).map(|i| i * n / max_points).collect();
            points = keep.iter().map(|&i| points[i]).collect();
            normals = keep.iter().map(|&i| normals[i]).collect();
        }
        PointCloud {
            points,
            normals: Some(normals),
            labels: None,
        }
    }

    fn neighbour(&self, u: usize, v: usize, du: isize, dv: isize, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let u = u.checked_add_signed(du).filter(|&u| u < self.width)?;
        let v = v.checked_add_signed(dv).filter(|&v| v < self.height)?;
        let q = self.world_point(u, v)?;
        ((q - p).norm() < EDGE_DEPTH_JUMP).then_some(q)
    }

    fn estimate_normal(&self, u: usize, v: usize, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let du = match (self.neighbour(u, v, 1, 0, p), self.neighbour(u, v, -1, 0, p)) {
            (Some(a), Some(b)) => a - b,
            (Some(a), None) => a - p,
            (None, Some(b)) => p - b,
            (None, None) => return None,
        };
        let dv = match (self.neighbour(u, v, 0, 1, p), self.neighbour(u, v, 0, -1, p)) {
            (Some(a), Some(b)) => a - b,
            (Some(a), None) => a - p,
            (None, Some(b)) => p - b,
            (None, None) => return None,
        };
        let n = du.cross(&dv);
        (n.norm() > 1e-12).then_some(n)
    }
}

/// Per-pixel image displacement `(du, dv)` from one frame to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
        }
    }

    pub fn at(&self, u: usize, v: usize) -> [f64; 2] {
        self.data[v * self.width + u]
    }
}

/// Source of dense 2D flow between consecutive frames.
pub trait FlowProvider {
    fn flow2d(&mut self, prev: &DepthFrame, next: &DepthFrame) -> Result<FlowField>;
}

/// 3D displacements of world points between two frames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneFlow3D {
    pub points: Vec<Vector3<f64>>,
    pub vectors: Vec<Vector3<f64>>,
    /// Time between the two frames, seconds.
    pub interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub rho: f64,
    pub min_points: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { rho: 0.06, min_points: 20 }
    }
}

pub fn check_resolution(a: &DepthFrame, b: &DepthFrame) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::ResolutionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Lifts image flow to world-frame displacements by backprojecting each
/// valid pixel in `prev` and its flowed correspondence in `next`.
pub fn lift_flow(flow: &FlowField, prev: &DepthFrame, next: &DepthFrame) -> SceneFlow3D {
    let mut out = SceneFlow3D {
        interval: next.timestamp - prev.timestamp,
        ..SceneFlow3D::default()
    };
    if (flow.width, flow.height) != (prev.width, prev.height) || check_resolution(prev, next).is_err() {
        return out;
    }
    for v in 0..prev.height {
        for u in 0..prev.width {
            let Some(d0) = prev.at(u, v) else { continue };
            let [du, dv] = flow.at(u, v);
            if !(du.is_finite() && dv.is_finite()) {
                continue;
            }
            let (u1, v1) = (u as f64 + du, v as f64 + dv);
            let Some(d1) = next.sample(u1, v1) else { continue };
            let p0 = prev
                .camera_pose
                .transform_point(&prev.intrinsics.backproject(u as f64, v as f64, d0));
            let p1 = next.camera_pose.transform_point(&next.intrinsics.backproject(u1, v1, d1));
            let vec = p1 - p0;
            if vec.iter().all(|c| c.is_finite()) {
                out.points.push(p0);
                out.vectors.push(vec);
            }
        }
    }
    out
}

/// Translation offset for the next seed: the mean in-sphere velocity times `dt`.
///
/// Returns zero when fewer than `cfg.min_points` displacements start within
/// `cfg.rho` of the seed.
pub fn seed_bias(flow3d: &SceneFlow3D, seed: &Pose, cfg: &FlowConfig, dt: f64) -> Vector3<f64> {
    let c = seed.translation();
    let r2 = cfg.rho * cfg.rho;
    let (sum, n) = flow3d
        .points
        .iter()
        .zip(&flow3d.vectors)
        .filter(|(p, _)| (*p - c).norm_squared() <= r2)
        .fold((Vector3::zeros(), 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if n < cfg.min_points.max(1) || !(flow3d.interval > 0.0) {
        if n > 0 {
            log::debug!("flow bias skipped: {n} points in sphere");
        }
        return Vector3::zeros();
    }
    sum / n as f64 / flow3d.interval * dt
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(depth: f64, t: f64) -> DepthFrame {
        DepthFrame {
            width: 8,
            height: 6,
            depth: vec![depth; 48],
            intrinsics: Intrinsics { fx: 100.0, fy: 100.0, cx: 4.0, cy: 3.0 },
            timestamp: t,
            camera_pose: Pose::identity(),
        }
    }

    #[test]
    fn zero_flow_gives_zero_vectors() {
        let (a, b) = (frame(0.5, 0.0), frame(0.5, 0.05));
        let f = lift_flow(&FlowField::zeros(8, 6), &a, &b);
        assert_eq!(f.points.len(), 48);
        assert!(f.vectors.iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn one_pixel_flow_at_half_meter() {
        let (a, b) = (frame(0.5, 0.0), frame(0.5, 0.05));
        let mut flow = FlowField::zeros(8, 6);
        flow.data[2 * 8 + 3] = [1.0, 0.0];
        let f = lift_flow(&flow, &a, &b);
        let i = f.points.iter().position(|p| (p - a.world_point(3, 2).unwrap()).norm() < 1e-12).unwrap();
        assert!((f.vectors[i] - Vector3::new(0.005, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn cloud_budget_is_met_exactly() {
        let a = frame(0.5, 0.0);
        let far = Vector3::new(0.0, 0.0, 0.5);
        assert_eq!(a.to_cloud(&far, 1.0, 0).len(), 48);
        for budget in [1, 7, 20, 47, 48, 100] {
            let c = a.to_cloud(&far, 1.0, budget);
            assert_eq!(c.len(), budget.min(48));
            assert_eq!(c.normals.as_ref().unwrap().len(), c.len());
        }
    }

    #[test]
    fn invalid_depth_is_skipped() {
        let mut a = frame(0.5, 0.0);
        a.depth[0] = 0.0;
        a.depth[1] = f64::NAN;
        let f = lift_flow(&FlowField::zeros(8, 6), &a, &frame(0.5, 0.05));
        assert_eq!(f.points.len(), 46);
    }

    #[test]
    fn planar_inverse_depth_interpolates_exactly() {
        let mut a = frame(0.5, 0.0);
        let plane = |u: f64, v: f64| 1.0 / (2.0 + 0.01 * u - 0.02 * v);
        for v in 0..6 {
            for u in 0..8 {
                a.depth[v * 8 + u] = plane(u as f64, v as f64);
            }
        }
        assert!((a.sample(2.3, 1.7).unwrap() - plane(2.3, 1.7)).abs() < 1e-12);
        a.depth[2 * 8 + 3] = 0.9;
        assert!(a.sample(2.5, 1.5).is_none());
    }

    #[test]
    fn bias_examples() {
        let cfg = FlowConfig::default();
        let seed = Pose::identity();
        assert_eq!(seed_bias(&SceneFlow3D::default(), &seed, &cfg, 0.05), Vector3::zeros());
        let uniform = SceneFlow3D {
            points: vec![Vector3::new(0.01, 0.0, 0.0); 30],
            vectors: vec![Vector3::new(0.005, 0.0, 0.0); 30],
            interval: 0.05,
        };
        assert!((seed_bias(&uniform, &seed, &cfg, 0.05) - Vector3::new(0.005, 0.0, 0.0)).norm() < 1e-15);
        let mut mixed = uniform.clone();
        for (i, v) in mixed.vectors.iter_mut().enumerate() {
            v.x = if i % 2 == 0 { 0.004 } else { 0.006 };
        }
        assert!((seed_bias(&mixed, &seed, &cfg, 0.05) - Vector3::new(0.005, 0.0, 0.0)).norm() < 1e-15);
        // Too few points in the sphere.
        let sparse = SceneFlow3D {
            points: uniform.points[..19].to_vec(),
            vectors: uniform.vectors[..19].to_vec(),
            interval: 0.05,
        };
        assert_eq!(seed_bias(&sparse, &seed, &cfg, 0.05), Vector3::zeros());
    }
}
