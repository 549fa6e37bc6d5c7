//! Grasp-quality evaluation.
//!
//! An [`Evaluator`] scores a batch of labeled, grasp-frame clouds. The
//! [`evaluate_candidates`] routine builds that batch: for every candidate it
//! crops the scene, adds `k` independently noised replicas merged with the
//! gripper cloud, runs a single evaluator call over all `N × k` inputs and
//! reduces each candidate's replicas to a mean and a spread.

mod heuristic;
mod remote;
pub mod wire;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use heuristic::{HeuristicCloudEvaluator, HeuristicConfig};
pub use remote::{serve_connection, RemoteEvaluator};

use crate::cloud::{self, crop_to_grasp_frame, merge_labeled, CropBox, PointCloud};
use crate::error::{Error, Result};
use crate::gripper::{gripper_cloud, GripperModel};
use crate::rng;
use crate::se3::Pose;

/// One evaluator input: a labeled cloud in the candidate's grasp frame.
///
/// `grasp` is the candidate pose in the world frame. Cloud-only evaluators
/// ignore it; simulation oracles use it to consult ground truth.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub cloud: PointCloud,
    pub grasp: Pose,
}

pub trait Evaluator: Send + Sync {
    /// One score in `[0, 1]` per input.
    fn quality(&self, batch: &[EvalInput]) -> Result<Vec<f64>>;

    fn name(&self) -> &str;
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn quality(&self, batch: &[EvalInput]) -> Result<Vec<f64>> {
        (**self).quality(batch)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for std::sync::Arc<E> {
    fn quality(&self, batch: &[EvalInput]) -> Result<Vec<f64>> {
        (**self).quality(batch)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Per-candidate replica scores and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub q_values: Vec<f64>,
    pub q_mean: f64,
    pub q_spread: f64,
}

impl EvaluationResult {
    pub fn from_values(q_values: Vec<f64>) -> Self {
        assert!(!q_values.is_empty(), "at least one replica");
        let q_mean = q_values.iter().sum::<f64>() / q_values.len() as f64;
        let (lo, hi) = q_values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| (lo.min(q), hi.max(q)));
        Self {
            q_values,
            q_mean,
            q_spread: hi - lo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluatorConfig {
    /// Noise replicas per candidate.
    pub k: usize,
    pub noise_sigma: f64,
    pub crop: CropBox,
    pub gripper_points_per_link: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            k: 5,
            noise_sigma: 0.002,
            crop: CropBox::default(),
            gripper_points_per_link: 32,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        self.crop.validate()
    }
}

/// Crops, noises and labels every candidate's input, candidate-major:
/// entries `i*k .. (i+1)*k` belong to candidate `i`.
///
/// Replica `j` of candidate `i` draws its noise from stream `(i, j)` of
/// `rng_seed`, so the batch does not depend on evaluation order.
pub fn build_batch(
    candidates: &[Pose],
    scene: &PointCloud,
    gripper: &PointCloud,
    cfg: &EvaluatorConfig,
    rng_seed: u64,
) -> Result<Vec<EvalInput>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    cfg.validate()?;
    let radius = cfg.crop.bounding_radius();
    let per_candidate: Vec<Result<Vec<EvalInput>>> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, grasp)| {
            let near = near_points(scene, grasp, radius);
            let mut cropped = crop_to_grasp_frame(&near, grasp, &cfg.crop);
            cropped.labels = None;
            let cand_seed = rng::derive_seed(rng_seed, i as u64);
            (0..cfg.k)
                .map(|j| {
                    let mut noisy = cropped.clone();
                    cloud::add_noise_in_place(&mut noisy.points, cfg.noise_sigma, rng::derive_seed(cand_seed, j as u64));
                    Ok(EvalInput {
                        cloud: merge_labeled(&noisy, gripper)?,
                        grasp: *grasp,
                    })
                })
                .collect()
        })
        .collect();
    let mut batch = Vec::with_capacity(candidates.len() * cfg.k);
    for items in per_candidate {
        batch.extend(items?);
    }
    Ok(batch)
}

fn near_points(scene: &PointCloud, grasp: &Pose, radius: f64) -> PointCloud {
    let c = grasp.translation();
    let r2 = radius * radius;
    scene.filter_indices(|i| (scene.points[i] - c).norm_squared() <= r2)
}

/// Groups `N × k` scores back into per-candidate results.
pub fn reduce_scores(scores: &[f64], k: usize, n: usize) -> Result<Vec<EvaluationResult>> {
    if scores.len() != n * k {
        return Err(Error::Evaluation(format!(
            "evaluator returned {} scores for {} inputs",
            scores.len(),
            n * k
        )));
    }
    if let Some(bad) = scores.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::Evaluation(format!("quality {bad} outside [0, 1]")));
    }
    Ok(scores.chunks(k).map(|c| EvaluationResult::from_values(c.to_vec())).collect())
}

/// Full noise-replication evaluation of a candidate set.
pub fn evaluate_candidates(
    candidates: &[Pose],
    scene: &PointCloud,
    evaluator: &dyn Evaluator,
    gripper: &GripperModel,
    cfg: &EvaluatorConfig,
    rng_seed: u64,
) -> Result<Vec<EvaluationResult>> {
    let gripper_pts = gripper_cloud(gripper, cfg.gripper_points_per_link);
    let batch = build_batch(candidates, scene, &gripper_pts, cfg, rng_seed)?;
    let scores = evaluator.quality(&batch)?;
    reduce_scores(&scores, cfg.k, candidates.len())
}
