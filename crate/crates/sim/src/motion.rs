//! Closed-form object motion scripts.

use std::f64::consts::PI;

use grasptrack_core::rng;
use grasptrack_core::se3::Pose;
use nalgebra::{Rotation3, Vector3};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionScript {
    Static,
    /// Rotation of every object about a vertical axis through `center`,
    /// starting at `start` and stopping once `extent` radians are covered.
    Turntable {
        radius: f64,
        omega: f64,
        extent: f64,
        direction: f64,
        #[serde(default)]
        center: [f64; 2],
        #[serde(default)]
        start: f64,
    },
    Linear {
        velocity: [f64; 3],
        #[serde(default)]
        start: f64,
        #[serde(default)]
        duration: Option<f64>,
    },
    /// Smooth bounded wandering built from seeded sinusoids.
    RandomWalk { speed_max: f64, rot_max: f64, seed: u64 },
    /// Poses are written by an outside driver between frames.
    External,
}

impl MotionScript {
    /// Peak linear speed of a point at the script's nominal radius.
    pub fn nominal_speed(&self) -> f64 {
        match *self {
            MotionScript::Turntable { radius, omega, .. } => radius * omega,
            MotionScript::Linear { velocity, .. } => Vector3::from(velocity).norm(),
            MotionScript::RandomWalk { speed_max, .. } => speed_max,
            MotionScript::Static | MotionScript::External => 0.0,
        }
    }

    /// Time after which the scene no longer changes, if any.
    pub fn settle_time(&self) -> Option<f64> {
        match *self {
            MotionScript::Static => Some(0.0),
            MotionScript::Turntable { omega, extent, start, .. } => Some(start + extent.abs() / omega.abs()),
            MotionScript::Linear { start, duration, .. } => duration.map(|d| start + d),
            MotionScript::RandomWalk { .. } | MotionScript::External => None,
        }
    }

    pub fn is_settled(&self, t: f64) -> bool {
        self.settle_time().is_some_and(|s| t >= s - 1e-12)
    }
}

/// Turntable extent draw: magnitude uniform in `[min, max]` radians, random direction.
pub fn sample_turntable_extent(rng: &mut rng::Rng, min: f64, max: f64) -> (f64, f64) {
    let extent = rng.random_range(min..=max);
    let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (extent, direction)
}

/// Rigid motion applied to the whole scene at time `t`.
pub fn script_transform(script: &MotionScript, t: f64) -> Pose {
    match *script {
        MotionScript::Static | MotionScript::External | MotionScript::RandomWalk { .. } => Pose::identity(),
        MotionScript::Turntable {
            omega,
            extent,
            direction,
            center,
            start,
            ..
        } => {
            let elapsed = (t - start).max(0.0);
            let angle = direction.signum() * (omega.abs() * elapsed).min(extent.abs());
            let c = Pose::translate(center[0], center[1], 0.0);
            c * Pose::rot_z(angle) * c.inverse()
        }
        MotionScript::Linear {
            velocity,
            start,
            duration,
        } => {
            let mut elapsed = (t - start).max(0.0);
            if let Some(d) = duration {
                elapsed = elapsed.min(d);
            }
            Pose::from_translation(Vector3::from(velocity) * elapsed)
        }
    }
}

/// Object poses at time `t` given their poses at `t = 0`.
pub fn step_scene(initial: &Scene, script: &MotionScript, t: f64) -> Scene {
    match script {
        MotionScript::Static | MotionScript::External => initial.clone(),
        MotionScript::RandomWalk { speed_max, rot_max, seed } => {
            let walk = RandomWalk::new(*speed_max, *rot_max, *seed);
            let mut out = initial.clone();
            for o in &mut out.objects {
                let (dp, rv) = walk.offset(t, o.id);
                let c = *o.pose.translation();
                o.pose = Pose::new(Rotation3::new(rv).matrix() * o.pose.rotation(), c + dp);
            }
            out
        }
        _ => initial.transformed(&script_transform(script, t)),
    }
}

const WALK_TERMS: usize = 3;

/// Sum of sinusoids whose derivative is bounded by construction.
#[derive(Debug, Clone)]
struct RandomWalk {
    speed_max: f64,
    rot_max: f64,
    seed: u64,
}

impl RandomWalk {
    fn new(speed_max: f64, rot_max: f64, seed: u64) -> Self {
        Self { speed_max, rot_max, seed }
    }

    /// Translation offset and rotation vector for object `id` at time `t`.
    fn offset(&self, t: f64, id: u32) -> (Vector3<f64>, Vector3<f64>) {
        let mut r = rng::stream(self.seed, id as u64);
        let mut channel = |rate: f64| {
            let mut out = Vector3::zeros();
            for axis in 0..3 {
                // Per-axis rate budget rate/sqrt(3) split evenly over the terms.
                let budget = rate / 3f64.sqrt() / WALK_TERMS as f64;
                for _ in 0..WALK_TERMS {
                    let w = 2.0 * PI * r.random_range(0.05..0.4);
                    let phase = r.random_range(0.0..2.0 * PI);
                    let amp = budget / w;
                    out[axis] += amp * ((w * t + phase).sin() - phase.sin());
                }
            }
            out
        };
        let dp = channel(self.speed_max);
        let rv = channel(self.rot_max);
        (dp, rv)
    }
}
