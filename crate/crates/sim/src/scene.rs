//! Primitive objects on a table and analytic ray casting against them.

use grasptrack_core::se3::Pose;
use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use parry3d_f64::shape::{Ball, Cuboid, Cylinder, SharedShape};
use serde::{Deserialize, Serialize};

/// Object geometry in its local frame, centered at the origin.
///
/// Cylinders are aligned with the local `z` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
}

impl Primitive {
    /// Radius of the smallest origin-centered sphere enclosing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Box { size } => 0.5 * Vector3::from(size).norm(),
            Primitive::Cylinder { radius, height } => (radius * radius + 0.25 * height * height).sqrt(),
            Primitive::Sphere { radius } => radius,
        }
    }

    /// Distance from the center to the lowest point when resting upright.
    pub fn rest_height(&self) -> f64 {
        match *self {
            Primitive::Box { size } => 0.5 * size[2],
            Primitive::Cylinder { height, .. } => 0.5 * height,
            Primitive::Sphere { radius } => radius,
        }
    }

    pub fn parry_shape(&self) -> SharedShape {
        match *self {
            Primitive::Box { size } => SharedShape::new(Cuboid::new(Vector3::from(size) * 0.5)),
            Primitive::Cylinder { radius, height } => SharedShape::new(Cylinder::new(0.5 * height, radius)),
            Primitive::Sphere { radius } => SharedShape::new(Ball::new(radius)),
        }
    }

    /// Pose of the parry shape for an object at `pose`; parry cylinders run along `y`.
    pub fn parry_pose(&self, pose: &Pose) -> Isometry3<f64> {
        let p = match self {
            Primitive::Cylinder { .. } => *pose * Pose::rot_x(std::f64::consts::FRAC_PI_2),
            _ => *pose,
        };
        isometry(&p)
    }

    /// Signed distance from a local point to the surface (negative inside).
    pub fn signed_distance_local(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Primitive::Sphere { radius } => p.norm() - radius,
            Primitive::Box { size } => {
                let q = p.abs() - Vector3::from(size) * 0.5;
                let outside = q.map(|c| c.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Primitive::Cylinder { radius, height } => {
                let dr = p.xy().norm() - radius;
                let dz = p.z.abs() - 0.5 * height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
        }
    }

    /// First intersection of a local-frame ray with the surface at `t > t_min`,
    /// with the outward local normal.
    pub fn ray_local(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Primitive::Sphere { radius } => {
                let b = o.dot(d);
                let a = d.norm_squared();
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a]
                    .into_iter()
                    .find(|&t| t > t_min)
                    .map(|t| (t, (o + d * t) / radius))
            }
            Primitive::Box { size } => {
                let h = Vector3::from(size) * 0.5;
                let mut best: Option<(f64, Vector3<f64>)> = None;
                for axis in 0..3 {
                    if d[axis] == 0.0 {
                        continue;
                    }
                    for sign in [-1.0, 1.0] {
                        let t = (sign * h[axis] - o[axis]) / d[axis];
                        if t <= t_min || best.is_some_and(|(bt, _)| t >= bt) {
                            continue;
                        }
                        let p = o + d * t;
                        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                        if p[u].abs() <= h[u] && p[v].abs() <= h[v] {
                            let mut n = Vector3::zeros();
                            n[axis] = sign;
                            best = Some((t, n));
                        }
                    }
                }
                best
            }
            Primitive::Cylinder { radius, height } => {
                let hh = 0.5 * height;
                let mut best: Option<(f64, Vector3<f64>)> = None;
                let mut consider = |t: f64, n: Vector3<f64>| {
                    if t > t_min && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, n));
                    }
                };
                let a = d.x * d.x + d.y * d.y;
                if a > 0.0 {
                    let b = o.x * d.x + o.y * d.y;
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / a, (-b + s) / a] {
                            let p = o + d * t;
                            if p.z.abs() <= hh {
                                consider(t, Vector3::new(p.x, p.y, 0.0) / radius);
                            }
                        }
                    }
                }
                if d.z != 0.0 {
                    for sign in [-1.0, 1.0] {
                        let t = (sign * hh - o.z) / d.z;
                        let p = o + d * t;
                        if p.x * p.x + p.y * p.y <= radius * radius {
                            consider(t, Vector3::new(0.0, 0.0, sign));
                        }
                    }
                }
                best
            }
        }
    }
}

pub fn isometry(p: &Pose) -> Isometry3<f64> {
    let r = Rotation3::from_matrix_unchecked(*p.rotation());
    Isometry3::from_parts(Translation3::from(*p.translation()), UnitQuaternion::from_rotation_matrix(&r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub shape: Primitive,
    pub pose: Pose,
}

impl SceneObject {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.shape.signed_distance_local(&self.pose.inverse_transform_point(p))
    }

    pub fn ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<(f64, Vector3<f64>)> {
        let o = self.pose.inverse_transform_point(origin);
        let d = self.pose.inverse_transform_vector(dir);
        self.shape
            .ray_local(&o, &d, t_min)
            .map(|(t, n)| (t, self.pose.transform_vector(&n)))
    }
}

/// Surface hit: ray parameter, world normal and object id (`None` for the table).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vector3<f64>,
    pub object: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    /// Table top height; `None` removes the table.
    #[serde(default = "default_table")]
    pub table: Option<f64>,
}

fn default_table() -> Option<f64> {
    Some(0.0)
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            objects: Vec::new(),
            table: Some(0.0),
        }
    }
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Self {
            objects,
            ..Self::default()
        }
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: u32) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// Checks unique ids and that no two objects overlap, using parry.
    pub fn validate(&self) -> Result<(), String> {
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.id == b.id {
                    return Err(format!("duplicate object id {}", a.id));
                }
                let d = parry3d_f64::query::distance(
                    &a.shape.parry_pose(&a.pose),
                    a.shape.parry_shape().as_ref(),
                    &b.shape.parry_pose(&b.pose),
                    b.shape.parry_shape().as_ref(),
                )
                .map_err(|e| format!("{e:?}"))?;
                if d <= 0.0 {
                    return Err(format!("objects {} and {} interpenetrate", a.id, b.id));
                }
            }
        }
        Ok(())
    }

    /// Nearest surface hit along a ray, optionally ignoring the table.
    pub fn ray_cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64, with_table: bool) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for o in &self.objects {
            if let Some((t, normal)) = o.ray(origin, dir, t_min) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        normal,
                        object: Some(o.id),
                    });
                }
            }
        }
        if let (true, Some(h)) = (with_table, self.table) {
            if dir.z < 0.0 && origin.z > h {
                let t = (h - origin.z) / dir.z;
                if t > t_min && best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        normal: Vector3::z(),
                        object: None,
                    });
                }
            }
        }
        best
    }

    /// Rigidly transforms every object and tilts the table with them.
    ///
    /// Only meaningful for table-free scenes unless `t` preserves the world `z`
    /// axis; used for equivariance checks.
    pub fn transformed(&self, t: &Pose) -> Scene {
        Scene {
            objects: self
                .objects
                .iter()
                .map(|o| SceneObject {
                    pose: *t * o.pose,
                    ..*o
                })
                .collect(),
            table: self.table,
        }
    }
}

/// Upright object resting on the table at `(x, y)` with yaw `yaw`.
pub fn resting(id: u32, shape: Primitive, x: f64, y: f64, yaw: f64) -> SceneObject {
    SceneObject {
        id,
        shape,
        pose: Pose::translate(x, y, shape.rest_height()) * Pose::rot_z(yaw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_ray_hits_front() {
        let s = Primitive::Sphere { radius: 0.1 };
        let (t, n) = s.ray_local(&Vector3::new(0.0, 0.0, -0.5), &Vector3::z(), 0.0).unwrap();
        assert!((t - 0.4).abs() < 1e-15);
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn box_and_cylinder_rays_agree_with_signed_distance() {
        let shapes = [
            Primitive::Box { size: [0.1, 0.06, 0.2] },
            Primitive::Cylinder { radius: 0.03, height: 0.12 },
        ];
        let origin = Vector3::new(0.2, 0.13, 0.25);
        for s in shapes {
            for k in 0..50 {
                let target = Vector3::new(0.01 * ((k % 5) as f64 - 2.0), 0.008 * ((k / 5 % 5) as f64 - 2.0), 0.01 * (k as f64 / 25.0 - 1.0));
                let d = (target - origin).normalize();
                if let Some((t, n)) = s.ray_local(&origin, &d, 0.0) {
                    let p = origin + d * t;
                    assert!(s.signed_distance_local(&p).abs() < 1e-12);
                    assert!(n.dot(&d) < 0.0);
                    assert!((n.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn table_is_hit_from_above_only() {
        let scene = Scene::default();
        let h = scene.ray_cast(&Vector3::new(0.0, 0.0, 0.3), &-Vector3::z(), 0.0, true).unwrap();
        assert!((h.t - 0.3).abs() < 1e-15 && h.object.is_none());
        assert!(scene.ray_cast(&Vector3::new(0.0, 0.0, 0.3), &Vector3::z(), 0.0, true).is_none());
        assert!(scene.ray_cast(&Vector3::new(0.0, 0.0, 0.3), &-Vector3::z(), 0.0, false).is_none());
    }

    #[test]
    fn validation_catches_overlap_and_duplicates() {
        let a = resting(1, Primitive::Sphere { radius: 0.05 }, 0.0, 0.0, 0.0);
        let b = resting(2, Primitive::Sphere { radius: 0.05 }, 0.2, 0.0, 0.0);
        assert!(Scene::new(vec![a, b]).validate().is_ok());
        let c = resting(2, Primitive::Box { size: [0.05; 3] }, 0.03, 0.0, 0.0);
        assert!(Scene::new(vec![a, c]).validate().is_err());
        assert!(Scene::new(vec![a, SceneObject { id: 1, ..b }]).validate().is_err());
    }
}
