//! Rigid-body pose algebra used by the sampler, scorer and output filter.
//!
//! A [`Pose`] is stored as a rotation matrix plus a translation vector. The
//! trace-based rotation distance and the crop transforms consume matrices
//! directly, so quaternions only show up at the serialization and filtering
//! boundaries.

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Per-entry tolerance for the orthonormality and determinant checks.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation matrix, re-projecting it onto SO(3) when it
    /// drifts past [`ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut pose = Self {
            rotation,
            translation,
        };
        pose.renormalize_if_needed();
        pose
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*rotation.matrix(), translation)
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn translate(x: f64, y: f64, z: f64) -> Self {
        Self::from_translation(Vector3::new(x, y, z))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Vector3::x_axis(), angle), Vector3::zeros())
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Vector3::y_axis(), angle), Vector3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Vector3::z_axis(), angle), Vector3::zeros())
    }

    /// Rotation about an arbitrary axis (normalized internally) with zero translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self::from_rotation(Rotation3::from_axis_angle(&axis, angle), Vector3::zeros())
    }

    /// Frame whose axes are the given columns. `z` is kept, `x` is
    /// orthogonalized against it and `y = z × x`.
    pub fn from_axes(x: Vector3<f64>, z: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let z = z.normalize();
        let x = (x - z * z.dot(&x)).normalize();
        let y = z.cross(&x);
        Self::new(Matrix3::from_columns(&[x, y, z]), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Maps a point expressed in this frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a parent-frame point into this frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p - self.translation))
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse_transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(v)
    }

    pub fn transform_point3(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_point(&p.coords))
    }

    /// Largest per-entry deviation of `RᵀR` from identity, combined with the
    /// determinant error.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det_err = (self.rotation.determinant() - 1.0).abs();
        gram.amax().max(det_err)
    }

    /// Projects the rotation back onto SO(3) through the polar decomposition
    /// when the orthonormality check exceeds [`ORTHONORMAL_TOL`].
    pub fn renormalize_if_needed(&mut self) {
        if self.orthonormality_error() > ORTHONORMAL_TOL {
            self.rotation = polar_rotation(&self.rotation);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Serialized form: translation (m) followed by a unit quaternion `w, x, y, z`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(a[3], a[4], a[5], a[6]));
        Self::from_quaternion(q, Vector3::new(a[0], a[1], a[2]))
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        compose(&self, &rhs)
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        let norm = (a[3] * a[3] + a[4] * a[4] + a[5] * a[5] + a[6] * a[6]).sqrt();
        if !(norm > 0.0) || a.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("pose needs finite values and a non-zero quaternion"));
        }
        Ok(Pose::from_array(a))
    }
}

/// Nearest rotation to `m` in the Frobenius sense (`U Vᵀ` from the SVD).
fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Euler perturbation applied on the right of a seed grasp.
///
/// Angles are intrinsic and applied roll → pitch → yaw about the grasp frame's
/// x → y → z axes, i.e. `R = Rx(roll) · Ry(pitch) · Rz(yaw)`. The x axis is the
/// finger closure direction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPerturbation {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub translation: Vector3<f64>,
}

impl EulerPerturbation {
    pub fn new(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            roll,
            pitch,
            yaw,
            translation,
        }
    }
}

/// `base · delta`, with `delta` expressed in the base frame.
pub fn compose(base: &Pose, delta: &Pose) -> Pose {
    Pose {
        rotation: base.rotation * delta.rotation,
        translation: base.rotation * delta.translation + base.translation,
    }
}

pub fn euler_to_pose(e: &EulerPerturbation) -> Pose {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), e.roll);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), e.pitch);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), e.yaw);
    Pose {
        rotation: *(rx * ry * rz).matrix(),
        translation: e.translation,
    }
}

/// Inverse of [`euler_to_pose`] for the rotation part: `(roll, pitch, yaw)`.
pub fn euler_angles(rotation: &Matrix3<f64>) -> (f64, f64, f64) {
    // R = Rx(a) Ry(b) Rz(c):
    //   R[0][2] = sin b, R[1][2] = -sin a cos b, R[2][2] = cos a cos b,
    //   R[0][0] = cos b cos c, R[0][1] = -cos b sin c
    let pitch = rotation[(0, 2)].clamp(-1.0, 1.0).asin();
    let roll = (-rotation[(1, 2)]).atan2(rotation[(2, 2)]);
    let yaw = (-rotation[(0, 1)]).atan2(rotation[(0, 0)]);
    (roll, pitch, yaw)
}

/// Euclidean distance between the two translations.
pub fn translation_distance(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

/// Geodesic angle of `R_aᵀ R_b` through `tr(R) = 1 + 2 cos θ`.
///
/// The cosine is clamped to `[-1, 1]` so round-off never produces NaN.
pub fn rotation_angle(a: &Pose, b: &Pose) -> f64 {
    // tr(AᵀB) = Σ_ij A_ij B_ij, no need to form the product.
    let trace = a.rotation.component_mul(&b.rotation).sum();
    let c = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}
