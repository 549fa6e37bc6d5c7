//! Adaptive low-pass (one-euro) smoothing of the selected grasp pose.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::se3::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_cutoff: f64,
    pub beta: f64,
    pub d_cutoff: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_cutoff: 1.0,
            beta: 0.5,
            d_cutoff: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.min_cutoff > 0.0 && self.d_cutoff > 0.0 && self.beta >= 0.0 {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("invalid filter config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub config: FilterConfig,
    pub translation: Vector3<f64>,
    pub derivative: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub initialized: bool,
}

impl FilterState {
    pub fn new(config: FilterConfig) -> Self {
        Self {
            config,
            translation: Vector3::zeros(),
            derivative: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            initialized: false,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.config);
    }
}

/// Smoothing factor of a first-order low-pass at `cutoff` Hz sampled every `dt`.
pub fn smoothing_factor(dt: f64, cutoff: f64) -> f64 {
    let tau = 1.0 / (2.0 * PI * cutoff);
    1.0 / (1.0 + tau / dt)
}

pub fn filter_pose(state: &FilterState, raw: &Pose, dt: f64) -> (FilterState, Pose) {
    let x = *raw.translation();
    let q = raw.quaternion();
    if !state.initialized {
        let next = FilterState {
            translation: x,
            derivative: Vector3::zeros(),
            rotation: q,
            initialized: true,
            ..*state
        };
        return (next, *raw);
    }
    let c = &state.config;
    let a_d = smoothing_factor(dt, c.d_cutoff);
    let mut translation = state.translation;
    let mut derivative = state.derivative;
    let mut alpha_sum = 0.0;
    for i in 0..3 {
        let dx = (x[i] - state.translation[i]) / dt;
        derivative[i] += a_d * (dx - derivative[i]);
        let a = smoothing_factor(dt, c.min_cutoff + c.beta * derivative[i].abs());
        translation[i] += a * (x[i] - translation[i]);
        alpha_sum += a;
    }
    let alpha = alpha_sum / 3.0;
    // Shortest arc: flip the target into the same hemisphere.
    let target = if state.rotation.coords.dot(&q.coords) < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    };
    let rotation = state
        .rotation
        .try_slerp(&target, alpha, 1e-12)
        .unwrap_or_else(|| state.rotation.nlerp(&target, alpha));
    let rotation = UnitQuaternion::new_normalize(rotation.into_inner());
    let next = FilterState {
        translation,
        derivative,
        rotation,
        initialized: true,
        config: state.config,
    };
    (next, Pose::from_quaternion(rotation, translation))
}
