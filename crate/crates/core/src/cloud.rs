//! Point clouds and the transformations the grasp pipeline applies to them:
//! cropping into a grasp frame, scene/gripper labeling, Gaussian noise and
//! shallow-angle normal dropout.

use nalgebra::Vector3;
use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::se3::Pose;

pub const LABEL_SCENE: u8 = 0;
pub const LABEL_GRIPPER: u8 = 1;

/// 3D points with optional per-point unit normals and scene/gripper labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
            labels: None,
        }
    }

    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let cloud = Self {
            points,
            normals: Some(normals),
            labels: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Label of point `i`; unlabeled clouds read as scene points.
    pub fn label(&self, i: usize) -> u8 {
        self.labels.as_ref().map_or(LABEL_SCENE, |l| l[i])
    }

    pub fn set_labels(&mut self, label: u8) {
        self.labels = Some(vec![label; self.points.len()]);
    }

    /// Checks the length and value invariants of the optional channels.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::LengthMismatch {
                    what: "normals",
                    expected: n,
                    got: normals.len(),
                });
            }
            if let Some(bad) = normals.iter().find(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidArgument(format!("normal {bad:?} is not unit length")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    what: "labels",
                    expected: n,
                    got: labels.len(),
                });
            }
            if labels.iter().any(|&l| l > LABEL_GRIPPER) {
                return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    /// Rigidly maps every point (and normal) through `pose`.
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.transform_vector(n)).collect()),
            labels: self.labels.clone(),
        }
    }

    /// Keeps the points whose index passes `keep`, carrying the optional channels.
    pub fn filter_indices(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|ns| idx.iter().map(|&i| ns[i]).collect()),
            labels: self.labels.as_ref().map(|ls| idx.iter().map(|&i| ls[i]).collect()),
        }
    }

    pub fn label_histogram(&self) -> (usize, usize) {
        let gripper = (0..self.len()).filter(|&i| self.label(i) == LABEL_GRIPPER).count();
        (self.len() - gripper, gripper)
    }
}

/// Rectangular prism in the grasp frame used to cut the scene around a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub x_half: f64,
    pub y_half: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for CropBox {
    fn default() -> Self {
        Self {
            x_half: 0.10,
            y_half: 0.05,
            z_min: -0.10,
            z_max: 0.03,
        }
    }
}

impl CropBox {
    pub fn validate(&self) -> Result<()> {
        if self.x_half > 0.0 && self.y_half > 0.0 && self.z_min < self.z_max {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate crop box {self:?}")))
        }
    }

    /// Inclusive containment test for a grasp-frame point.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x.abs() <= self.x_half && p.y.abs() <= self.y_half && p.z >= self.z_min && p.z <= self.z_max
    }

    /// Radius of the sphere around the grasp origin that encloses the box.
    pub fn bounding_radius(&self) -> f64 {
        let z = self.z_min.abs().max(self.z_max.abs());
        (self.x_half * self.x_half + self.y_half * self.y_half + z * z).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Per-axis standard deviation (m).
    pub noise_sigma: f64,
    pub shallow_angle_min: f64,
    pub shallow_angle_max: f64,
    pub drop_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.002,
            shallow_angle_min: 80f64.to_radians(),
            shallow_angle_max: 90f64.to_radians(),
            drop_prob: 0.7,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.drop_prob)
            && self.shallow_angle_min < self.shallow_angle_max
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid augmentation config {self:?}")))
        }
    }
}

/// Expresses `scene` in the grasp frame and keeps the points inside `crop`.
pub fn crop_to_grasp_frame(scene: &PointCloud, grasp: &Pose, crop: &CropBox) -> PointCloud {
    let mut out = PointCloud {
        points: Vec::new(),
        normals: scene.normals.as_ref().map(|_| Vec::new()),
        labels: scene.labels.as_ref().map(|_| Vec::new()),
    };
    for (i, p) in scene.points.iter().enumerate() {
        let local = grasp.inverse_transform_point(p);
        if !crop.contains(&local) {
            continue;
        }
        out.points.push(local);
        if let (Some(dst), Some(src)) = (out.normals.as_mut(), scene.normals.as_ref()) {
            dst.push(grasp.inverse_transform_vector(&src[i]));
        }
        if let (Some(dst), Some(src)) = (out.labels.as_mut(), scene.labels.as_ref()) {
            dst.push(src[i]);
        }
    }
    out
}

/// Concatenates scene then gripper points with labels on every point.
///
/// Normals are kept only when both inputs carry them.
pub fn merge_labeled(scene: &PointCloud, gripper: &PointCloud) -> Result<PointCloud> {
    if let Some(labels) = &scene.labels {
        if labels.iter().any(|&l| l != LABEL_SCENE) {
            return Err(Error::LabelConflict("scene cloud contains gripper labels".into()));
        }
    }
    match &gripper.labels {
        Some(labels) if labels.iter().all(|&l| l == LABEL_GRIPPER) => {}
        Some(_) => return Err(Error::LabelConflict("gripper cloud contains scene labels".into())),
        None if gripper.is_empty() => {}
        None => return Err(Error::LabelConflict("gripper cloud is unlabeled".into())),
    }
    let mut points = Vec::with_capacity(scene.len() + gripper.len());
    points.extend_from_slice(&scene.points);
    points.extend_from_slice(&gripper.points);
    let mut labels = vec![LABEL_SCENE; scene.len()];
    labels.resize(scene.len() + gripper.len(), LABEL_GRIPPER);
    let normals = match (&scene.normals, &gripper.normals) {
        (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
        _ => None,
    };
    Ok(PointCloud {
        points,
        normals,
        labels: Some(labels),
    })
}

/// Adds independent zero-mean Gaussian noise of std `sigma` to every coordinate.
pub fn inject_noise(cloud: &PointCloud, sigma: f64, rng_seed: u64) -> PointCloud {
    let mut out = cloud.clone();
    add_noise_in_place(&mut out.points, sigma, rng_seed);
    out
}

pub(crate) fn add_noise_in_place(points: &mut [Vector3<f64>], sigma: f64, rng_seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = rng::rng_from_seed(rng_seed);
    for p in points.iter_mut() {
        p.x += normal.sample(&mut rng);
        p.y += normal.sample(&mut rng);
        p.z += normal.sample(&mut rng);
    }
}

/// Angle in `[0, π/2]` between a surface normal and the viewing axis,
/// ignoring orientation sign.
pub fn view_angle(normal: &Vector3<f64>, view_dir: &Vector3<f64>) -> f64 {
    normal.dot(view_dir).abs().min(1.0).acos()
}

/// Drops points seen at a shallow angle with probability `cfg.drop_prob`.
///
/// The band `[shallow_angle_min, shallow_angle_max]` is inclusive at both ends.
pub fn normal_dropout(
    cloud: &PointCloud,
    view_dir: &Vector3<f64>,
    cfg: &AugmentConfig,
    rng_seed: u64,
) -> Result<PointCloud> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    let view = view_dir.normalize();
    let mut rng = rng::rng_from_seed(rng_seed);
    Ok(cloud.filter_indices(|i| {
        let angle = view_angle(&normals[i], &view);
        if angle < cfg.shallow_angle_min || angle > cfg.shallow_angle_max {
            return true;
        }
        rng.random::<f64>() >= cfg.drop_prob
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn crop_keeps_origin_and_drops_outside() {
        let cloud = PointCloud::new(vec![v(0.0, 0.0, 0.0), v(0.11, 0.0, 0.0), v(0.0, 0.0, 0.04), v(0.0, 0.05, -0.1)]);
        let out = crop_to_grasp_frame(&cloud, &Pose::identity(), &CropBox::default());
        assert_eq!(out.points, vec![v(0.0, 0.0, 0.0), v(0.0, 0.05, -0.1)]);
    }

    #[test]
    fn crop_expresses_points_in_grasp_frame() {
        let grasp = Pose::translate(1.0, 2.0, 3.0) * Pose::rot_z(std::f64::consts::FRAC_PI_2);
        // World point one centimeter along the grasp x axis (world +y).
        let cloud = PointCloud::with_normals(vec![v(1.0, 2.01, 3.0)], vec![v(0.0, 1.0, 0.0)]).unwrap();
        let out = crop_to_grasp_frame(&cloud, &grasp, &CropBox::default());
        assert!((out.points[0] - v(0.01, 0.0, 0.0)).norm() < 1e-12);
        assert!((out.normals.unwrap()[0] - v(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn merge_orders_scene_then_gripper() {
        let scene = PointCloud::new(vec![v(0.0, 0.0, 0.0); 3]);
        let mut gripper = PointCloud::new(vec![v(1.0, 0.0, 0.0); 2]);
        gripper.set_labels(LABEL_GRIPPER);
        let merged = merge_labeled(&scene, &gripper).unwrap();
        assert_eq!(merged.labels.as_deref(), Some(&[0, 0, 0, 1, 1][..]));
        assert_eq!(merged.label_histogram(), (3, 2));

        let only = merge_labeled(&PointCloud::default(), &gripper).unwrap();
        assert_eq!(only.points, gripper.points);
        assert_eq!(only.labels, gripper.labels);
    }

    #[test]
    fn merge_rejects_conflicting_labels() {
        let mut scene = PointCloud::new(vec![v(0.0, 0.0, 0.0)]);
        scene.set_labels(LABEL_GRIPPER);
        let mut gripper = PointCloud::new(vec![v(1.0, 0.0, 0.0)]);
        gripper.set_labels(LABEL_GRIPPER);
        assert!(matches!(merge_labeled(&scene, &gripper), Err(Error::LabelConflict(_))));
        gripper.set_labels(LABEL_SCENE);
        assert!(matches!(
            merge_labeled(&PointCloud::default(), &gripper),
            Err(Error::LabelConflict(_))
        ));
    }

    #[test]
    fn zero_sigma_noise_is_identity_and_seed_is_reproducible() {
        let cloud = PointCloud::new(vec![v(0.1, 0.2, 0.3), v(-0.1, 0.0, 0.5)]);
        assert_eq!(inject_noise(&cloud, 0.0, 3), cloud);
        assert_eq!(inject_noise(&cloud, 0.002, 3), inject_noise(&cloud, 0.002, 3));
        assert_ne!(inject_noise(&cloud, 0.002, 3), inject_noise(&cloud, 0.002, 4));
    }

    #[test]
    fn dropout_requires_normals() {
        let cloud = PointCloud::new(vec![v(0.0, 0.0, 0.0)]);
        let err = normal_dropout(&cloud, &Vector3::z(), &AugmentConfig::default(), 0).unwrap_err();
        assert_eq!(err.to_string(), "augmentation requires normals");
    }

    #[test]
    fn dropout_ignores_facing_points_and_zero_probability() {
        let n = v(10f64.to_radians().sin(), 0.0, 10f64.to_radians().cos());
        let cloud = PointCloud::with_normals(vec![v(0.0, 0.0, 0.0); 500], vec![n; 500]).unwrap();
        let out = normal_dropout(&cloud, &Vector3::z(), &AugmentConfig::default(), 1).unwrap();
        assert_eq!(out.len(), 500);

        let shallow = v(85f64.to_radians().sin(), 0.0, 85f64.to_radians().cos());
        let cloud = PointCloud::with_normals(vec![v(0.0, 0.0, 0.0); 500], vec![shallow; 500]).unwrap();
        let cfg = AugmentConfig {
            drop_prob: 0.0,
            ..AugmentConfig::default()
        };
        assert_eq!(normal_dropout(&cloud, &Vector3::z(), &cfg, 1).unwrap().len(), 500);
    }

    #[test]
    fn validate_catches_bad_channels() {
        let mut cloud = PointCloud::new(vec![v(0.0, 0.0, 0.0)]);
        cloud.labels = Some(vec![2]);
        assert!(cloud.validate().is_err());
        cloud.labels = Some(vec![0, 1]);
        assert!(matches!(cloud.validate(), Err(Error::LengthMismatch { .. })));
        assert!(PointCloud::with_normals(vec![v(0.0, 0.0, 0.0)], vec![v(0.0, 0.0, 2.0)]).is_err());
    }
}
