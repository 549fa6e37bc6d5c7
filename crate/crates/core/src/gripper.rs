//! Parametric two-finger gripper.
//!
//! Grasp frame convention: `x` is the finger closure direction, `y` runs
//! across the finger width and `z` is the approach direction (pointing at the
//! object). The origin sits midway between the fingertips, so the fingers
//! span `z ∈ [-finger_length, 0]` and the palm block sits behind them.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, LABEL_GRIPPER};

/// Axis-aligned box in the grasp frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspBox {
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
}

impl GraspBox {
    pub fn from_bounds(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self {
            center: (min + max) * 0.5,
            half: (max - min) * 0.5,
        }
    }

    pub fn min(&self) -> Vector3<f64> {
        self.center - self.half
    }

    pub fn max(&self) -> Vector3<f64> {
        self.center + self.half
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half.x && d.y.abs() <= self.half.y && d.z.abs() <= self.half.z
    }

    /// Grows (or shrinks) every half extent by `margin`.
    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            center: self.center,
            half: self.half.add_scalar(margin),
        }
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + self.half.component_mul(&s);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperModel {
    pub finger_length: f64,
    pub finger_width: f64,
    pub finger_thickness: f64,
    pub max_opening: f64,
    /// Palm block size along x, y, z.
    pub palm: [f64; 3],
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            finger_length: 0.045,
            finger_width: 0.02,
            finger_thickness: 0.01,
            max_opening: 0.08,
            palm: [0.10, 0.03, 0.02],
        }
    }
}

impl GripperModel {
    pub fn half_opening(&self) -> f64 {
        0.5 * self.max_opening
    }

    /// Finger on the +x (`side = 1`) or -x (`side = -1`) side at full opening.
    pub fn finger(&self, side: f64) -> GraspBox {
        let inner = side * self.half_opening();
        let outer = side * (self.half_opening() + self.finger_thickness);
        let w = 0.5 * self.finger_width;
        GraspBox::from_bounds(
            Vector3::new(inner.min(outer), -w, -self.finger_length),
            Vector3::new(inner.max(outer), w, 0.0),
        )
    }

    pub fn palm_box(&self) -> GraspBox {
        let z0 = -self.finger_length;
        GraspBox::from_bounds(
            Vector3::new(-0.5 * self.palm[0], -0.5 * self.palm[1], z0 - self.palm[2]),
            Vector3::new(0.5 * self.palm[0], 0.5 * self.palm[1], z0),
        )
    }

    /// Bodies that must stay collision free: both fingers and the palm.
    pub fn collision_boxes(&self) -> [GraspBox; 3] {
        [self.finger(1.0), self.finger(-1.0), self.palm_box()]
    }

    /// Region swept by the finger pads while closing.
    pub fn closing_region(&self) -> GraspBox {
        let w = 0.5 * self.finger_width;
        GraspBox::from_bounds(
            Vector3::new(-self.half_opening(), -w, -self.finger_length),
            Vector3::new(self.half_opening(), w, 0.0),
        )
    }

    /// Sampled links: proximal (palm side) and distal (tip side) halves of each finger.
    pub fn links(&self) -> [GraspBox; 4] {
        let mid = -0.5 * self.finger_length;
        let mut out = [GraspBox::from_bounds(Vector3::zeros(), Vector3::zeros()); 4];
        for (k, side) in [1.0, -1.0].into_iter().enumerate() {
            let f = self.finger(side);
            let (lo, hi) = (f.min(), f.max());
            out[2 * k] = GraspBox::from_bounds(lo, Vector3::new(hi.x, hi.y, mid));
            out[2 * k + 1] = GraspBox::from_bounds(Vector3::new(lo.x, lo.y, mid), hi);
        }
        out
    }

    pub fn validate(&self) -> crate::Result<()> {
        let dims = [self.finger_length, self.finger_width, self.finger_thickness, self.max_opening];
        if dims.iter().chain(self.palm.iter()).all(|&d| d > 0.0) {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("gripper dimensions must be positive: {self:?}")))
        }
    }
}

/// Surface samples of the gripper links, expressed in the grasp frame and
/// labeled as gripper points.
///
/// Each link receives `points_per_link` samples split across its six faces in
/// proportion to face area. Within a face the samples follow an R2
/// low-discrepancy sequence that starts at the face centroid, so the output
/// is fully deterministic.
pub fn gripper_cloud(model: &GripperModel, points_per_link: usize) -> PointCloud {
    let links = model.links();
    let mut points = Vec::with_capacity(points_per_link * links.len());
    let mut normals = Vec::with_capacity(points_per_link * links.len());
    for link in &links {
        sample_box_surface(link, points_per_link, &mut points, &mut normals);
    }
    let n = points.len();
    PointCloud {
        points,
        normals: Some(normals),
        labels: Some(vec![LABEL_GRIPPER; n]),
    }
}

fn sample_box_surface(b: &GraspBox, count: usize, points: &mut Vec<Vector3<f64>>, normals: &mut Vec<Vector3<f64>>) {
    // Faces as (normal axis, sign); the two in-plane axes follow cyclically.
    let faces: Vec<(usize, f64)> = (0..3).flat_map(|a| [(a, 1.0), (a, -1.0)]).collect();
    let areas: Vec<f64> = faces
        .iter()
        .map(|&(a, _)| 4.0 * b.half[(a + 1) % 3] * b.half[(a + 2) % 3])
        .collect();
    for ((axis, sign), n) in faces.iter().zip(allocate(count, &areas)) {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut normal = Vector3::zeros();
        normal[*axis] = *sign;
        for i in 0..n {
            let (s, t) = r2(i);
            let mut p = b.center;
            p[*axis] += sign * b.half[*axis];
            p[u] += (2.0 * s - 1.0) * b.half[u];
            p[v] += (2.0 * t - 1.0) * b.half[v];
            points.push(p);
            normals.push(normal);
        }
    }
}

/// Largest-remainder apportionment of `count` samples by weight.
fn allocate(count: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| count as f64 * w / total).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = count - alloc.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        alloc[i] += 1;
    }
    alloc
}

fn r2(i: usize) -> (f64, f64) {
    // Plastic-number sequence; index 0 lands on (0.5, 0.5).
    const G: f64 = 1.324_717_957_244_746;
    let a1 = 1.0 / G;
    let a2 = 1.0 / (G * G);
    ((0.5 + a1 * i as f64).fract(), (0.5 + a2 * i as f64).fract())
}
