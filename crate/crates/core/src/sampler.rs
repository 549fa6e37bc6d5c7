//! Candidate generation around the seed grasp and the region scaling policy.

use nalgebra::Vector3;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::se3::{compose, euler_to_pose, EulerPerturbation, Pose};

/// Uniform perturbation box around the seed, plus the adaptive scale state.
///
/// The roll half-range is identically zero: roll is the finger closure axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRegion {
    pub trans_half_nominal: Vector3<f64>,
    pub pitch_half_nominal: f64,
    pub yaw_half_nominal: f64,
    pub scale: f64,
    pub max_scale: f64,
    pub growth: f64,
    pub n_nominal: usize,
    pub good_threshold: f64,
}

impl Default for SamplingRegion {
    fn default() -> Self {
        Self {
            trans_half_nominal: Vector3::repeat(0.02),
            pitch_half_nominal: 5f64.to_radians(),
            yaw_half_nominal: 5f64.to_radians(),
            scale: 1.0,
            max_scale: 3.0,
            growth: 1.3,
            n_nominal: 200,
            good_threshold: 0.5,
        }
    }
}

impl SamplingRegion {
    /// Number of candidates at the current scale, rounded up.
    pub fn count(&self) -> usize {
        // Guard against products like 200 * 1.3 = 260.00000000000003.
        let n = self.n_nominal as f64 * self.scale;
        (n - 1e-9).ceil().max(0.0) as usize
    }

    pub fn trans_half(&self) -> Vector3<f64> {
        self.trans_half_nominal * self.scale
    }

    /// Half-diagonal of the current translation box.
    pub fn trans_diagonal(&self) -> f64 {
        self.trans_half().norm()
    }

    pub fn is_at_max(&self) -> bool {
        self.scale >= self.max_scale
    }

    pub fn nominal(&self) -> Self {
        Self { scale: 1.0, ..*self }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.trans_half_nominal.iter().all(|&v| v >= 0.0)
            && self.pitch_half_nominal >= 0.0
            && self.yaw_half_nominal >= 0.0
            && self.max_scale >= 1.0
            && self.growth >= 1.0
            && (1.0..=self.max_scale).contains(&self.scale)
            && self.good_threshold.is_finite();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("invalid sampling region {self:?}")))
        }
    }
}

/// Draws one perturbation inside the region at its current scale.
pub fn draw_perturbation(region: &SamplingRegion, rng: &mut rng::Rng) -> EulerPerturbation {
    let th = region.trans_half();
    let sym = |rng: &mut rng::Rng, half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let translation = Vector3::new(sym(rng, th.x), sym(rng, th.y), sym(rng, th.z));
    let pitch = sym(rng, region.pitch_half_nominal * region.scale);
    let yaw = sym(rng, region.yaw_half_nominal * region.scale);
    EulerPerturbation::new(0.0, pitch, yaw, translation)
}

/// `max(1, count)` candidates: the seed itself first, then uniform
/// perturbations applied on the right of the seed.
pub fn sample_candidates(seed: &Pose, region: &SamplingRegion, rng_seed: u64) -> Vec<Pose> {
    let n = region.count().max(1);
    let mut rng = rng::rng_from_seed(rng_seed);
    let mut out = Vec::with_capacity(n);
    out.push(*seed);
    for _ in 1..n {
        let e = draw_perturbation(region, &mut rng);
        out.push(compose(seed, &euler_to_pose(&e)));
    }
    out
}

/// Grows the region by `growth` (capped at `max_scale`) when the best score is
/// below the threshold, resets it to nominal when above, and leaves it alone
/// on an exact tie.
pub fn update_scale(region: &SamplingRegion, best_score: f64) -> SamplingRegion {
    let scale = if best_score < region.good_threshold {
        (region.scale * region.growth).min(region.max_scale)
    } else if best_score > region.good_threshold {
        1.0
    } else {
        region.scale
    };
    SamplingRegion { scale, ..*region }
}
