//! Candidate scoring and selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::EvaluationResult;
use crate::se3::{rotation_angle, translation_distance, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    /// Per meter of translation away from the seed.
    pub k1: f64,
    /// Per radian of rotation away from the seed.
    pub k2: f64,
    /// Per unit of quality spread across noise replicas.
    pub k3: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { k1: 5.0, k2: 1.0, k3: 0.5 }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.k1, self.k2, self.k3].iter().all(|k| *k >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("score weights must be >= 0: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredGrasp {
    pub pose: Pose,
    pub score: f64,
    pub q_mean: f64,
    pub q_spread: f64,
    pub t_dist: f64,
    pub r_dist: f64,
}

/// `S = q_mean - k1 T - k2 R - k3 spread`, unclipped.
pub fn score(candidate: &Pose, seed: &Pose, ev: &EvaluationResult, w: &ScoreWeights) -> ScoredGrasp {
    let t_dist = translation_distance(seed, candidate);
    let r_dist = rotation_angle(seed, candidate);
    ScoredGrasp {
        pose: *candidate,
        score: ev.q_mean - w.k1 * t_dist - w.k2 * r_dist - w.k3 * ev.q_spread,
        q_mean: ev.q_mean,
        q_spread: ev.q_spread,
        t_dist,
        r_dist,
    }
}

pub fn score_all(candidates: &[Pose], seed: &Pose, results: &[EvaluationResult], w: &ScoreWeights) -> Vec<ScoredGrasp> {
    candidates
        .iter()
        .zip(results)
        .map(|(c, r)| score(c, seed, r, w))
        .collect()
}

/// Index of the best entry: highest score, then smaller `t_dist`, then
/// smaller `r_dist`, then the lowest index.
pub fn best_index(scored: &[ScoredGrasp]) -> Result<usize> {
    if scored.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut best = 0;
    for (i, s) in scored.iter().enumerate().skip(1) {
        if ranks_above(s, &scored[best]) {
            best = i;
        }
    }
    Ok(best)
}

fn ranks_above(a: &ScoredGrasp, b: &ScoredGrasp) -> bool {
    let ord = a
        .score
        .total_cmp(&b.score)
        .then_with(|| b.t_dist.total_cmp(&a.t_dist))
        .then_with(|| b.r_dist.total_cmp(&a.r_dist));
    ord == Ordering::Greater
}

pub fn select_best(scored: &[ScoredGrasp]) -> Result<ScoredGrasp> {
    best_index(scored).map(|i| scored[i])
}
