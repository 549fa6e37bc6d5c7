//! The per-frame closed-loop grasp tracker and the cartesian servo it drives.

use std::time::Instant;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::evaluator::{self, EvaluationResult, Evaluator, EvaluatorConfig};
use crate::flow::{lift_flow, seed_bias, DepthFrame, FlowConfig, FlowProvider};
use crate::gripper::{gripper_cloud, GripperModel};
use crate::pose_filter::{filter_pose, FilterConfig, FilterState};
use crate::rng;
use crate::sampler::{sample_candidates, update_scale, SamplingRegion};
use crate::scoring::{best_index, score_all, ScoreWeights, ScoredGrasp};
use crate::se3::{compose, rotation_angle, translation_distance, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    HandoverInit,
    Track,
    Approach,
    Closed,
    Lost,
}

impl Phase {
    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        self == next
            || matches!(
                (self, next),
                (HandoverInit, Track) | (Track, Approach) | (Approach, Closed) | (Track, Lost) | (Lost, Track)
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoConfig {
    pub kp: f64,
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            kp: 5.0,
            v_max: 0.3,
            w_max: 2.0,
        }
    }
}

/// Region of the depth image turned into the evaluated scene cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    /// Keep points within this radius of the seed.
    pub roi_radius: f64,
    pub max_points: usize,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            roi_radius: 0.15,
            max_points: 2048,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub standoff: f64,
    pub commit_count: usize,
    pub commit_tol_t: f64,
    pub commit_tol_r: f64,
    pub handover_seed_offset: f64,
    pub loop_dt: f64,
    /// Consecutive bad frames at the largest region before declaring loss.
    pub lost_frames: usize,
    pub adaptive: bool,
    pub use_flow: bool,
    pub sampler: SamplingRegion,
    pub score: ScoreWeights,
    pub evaluator: EvaluatorConfig,
    pub filter: FilterConfig,
    pub flow: FlowConfig,
    pub servo: ServoConfig,
    pub cloud: CloudConfig,
    pub gripper: GripperModel,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            standoff: 0.10,
            commit_count: 5,
            commit_tol_t: 0.01,
            commit_tol_r: 5f64.to_radians(),
            handover_seed_offset: 0.15,
            loop_dt: 0.05,
            lost_frames: 40,
            adaptive: true,
            use_flow: true,
            sampler: SamplingRegion::default(),
            score: ScoreWeights::default(),
            evaluator: EvaluatorConfig::default(),
            filter: FilterConfig::default(),
            flow: FlowConfig::default(),
            servo: ServoConfig::default(),
            cloud: CloudConfig::default(),
            gripper: GripperModel::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.standoff,
            self.commit_tol_t,
            self.commit_tol_r,
            self.handover_seed_offset,
            self.loop_dt,
            self.flow.rho,
            self.servo.kp,
            self.servo.v_max,
            self.servo.w_max,
            self.cloud.roi_radius,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.commit_count == 0 || self.lost_frames == 0 {
            return Err(Error::InvalidArgument("tracker parameters must be positive".into()));
        }
        self.sampler.validate()?;
        self.score.validate()?;
        self.evaluator.validate()?;
        self.filter.validate()?;
        self.gripper.validate()
    }

    /// Open-loop approach length: `standoff / v_max` seconds, in loop steps.
    pub fn approach_steps(&self) -> usize {
        ((self.standoff / self.servo.v_max / self.loop_dt) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub phase: Phase,
    pub seed: Pose,
    pub region: SamplingRegion,
    pub filter: FilterState,
    pub in_tol_count: usize,
    pub last_best: Option<ScoredGrasp>,
    pub pending_bias: Vector3<f64>,
    pub filtered: Option<Pose>,
    /// Consecutive bad frames spent at the largest region.
    pub bad_at_max: usize,
    pub committed: Option<Pose>,
    pub approach_path: Vec<Pose>,
    pub approach_index: usize,
    pub step_index: u64,
}

impl TrackerState {
    fn new(phase: Phase, seed: Pose, cfg: &TrackerConfig) -> Self {
        Self {
            phase,
            seed,
            region: cfg.sampler,
            filter: FilterState::new(cfg.filter),
            in_tol_count: 0,
            last_best: None,
            pending_bias: Vector3::zeros(),
            filtered: None,
            bad_at_max: 0,
            committed: None,
            approach_path: Vec::new(),
            approach_index: 0,
            step_index: 0,
        }
    }
}

/// Wall-clock cost of each pipeline stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub cloud_ms: f64,
    pub sample_ms: f64,
    pub batch_ms: f64,
    pub inference_ms: f64,
    pub score_ms: f64,
    pub flow_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub pose: Pose,
    pub score: f64,
    pub q_mean: f64,
    pub q_spread: f64,
    pub t_dist: f64,
    pub r_dist: f64,
}

impl From<ScoredGrasp> for BestSummary {
    fn from(s: ScoredGrasp) -> Self {
        Self {
            pose: s.pose,
            score: s.score,
            q_mean: s.q_mean,
            q_spread: s.q_spread,
            t_dist: s.t_dist,
            r_dist: s.r_dist,
        }
    }
}

/// Score histogram bins: `(-inf, 0)`, then ten equal bins over `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub t: f64,
    pub step: u64,
    pub phase: Phase,
    pub seed: Pose,
    pub best: Option<BestSummary>,
    pub filtered: Option<Pose>,
    pub target: Pose,
    pub tool: Pose,
    pub region_scale: f64,
    pub n_candidates: usize,
    pub bias: Vector3<f64>,
    pub in_tol_count: usize,
    pub scene_points: usize,
    pub score_histogram: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTiming>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub target: Pose,
    /// The tool should be placed exactly at `target` (blind approach).
    pub open_loop: bool,
    pub telemetry: Telemetry,
}

/// Grasp tracker state machine.
pub struct Tracker {
    pub config: TrackerConfig,
    pub state: TrackerState,
    rng_seed: u64,
    gripper_points: PointCloud,
    prev_frame: Option<DepthFrame>,
    last_target: Option<Pose>,
}

impl Tracker {
    /// Starts tracking from a known seed grasp.
    pub fn new(config: TrackerConfig, seed: Pose, rng_seed: u64) -> Result<Self> {
        Self::with_phase(config, Phase::Track, seed, rng_seed)
    }

    /// Starts in the handover initialization phase with the seed fixed ahead of the tool.
    pub fn new_handover(config: TrackerConfig, tool: &Pose, rng_seed: u64) -> Result<Self> {
        let seed = handover_seed(tool, config.handover_seed_offset);
        Self::with_phase(config, Phase::HandoverInit, seed, rng_seed)
    }

    fn with_phase(config: TrackerConfig, phase: Phase, seed: Pose, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            state: TrackerState::new(phase, seed, &config),
            gripper_points: gripper_cloud(&config.gripper, config.evaluator.gripper_points_per_link),
            config,
            rng_seed,
            prev_frame: None,
            last_target: None,
        })
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    /// Runs one loop iteration on a new frame.
    ///
    /// `allow_commit` gates the switch to the blind approach; a caller can
    /// hold it off while the scene is known to be unsettled.
    pub fn step(
        &mut self,
        frame: &DepthFrame,
        tool: &Pose,
        evaluator: &dyn Evaluator,
        flow: Option<&mut dyn FlowProvider>,
        allow_commit: bool,
    ) -> StepOutput {
        let start = Instant::now();
        let mut timing = StageTiming::default();
        let cfg = self.config;
        let step = self.state.step_index;
        self.state.step_index += 1;

        match self.state.phase {
            Phase::Closed => return self.passive_output(frame, tool, *tool, false, timing, start),
            Phase::Approach => return self.approach_step(frame, tool, timing, start),
            _ => {}
        }
        let good = cfg.sampler.good_threshold;

        if self.state.phase == Phase::HandoverInit {
            self.state.seed = handover_seed(tool, cfg.handover_seed_offset);
        } else {
            let biased = self.state.seed.translation() + self.state.pending_bias;
            self.state.seed = self.state.seed.with_translation(biased);
        }
        let seed = self.state.seed;

        let t = Instant::now();
        let scene = frame.to_cloud(seed.translation(), cfg.cloud.roi_radius, cfg.cloud.max_points);
        timing.cloud_ms = ms(t);

        let t = Instant::now();
        let candidates = sample_candidates(&seed, &self.state.region, rng::derive_seed(self.rng_seed, 2 * step));
        timing.sample_ms = ms(t);

        let eval = self.evaluate(&candidates, &scene, evaluator, rng::derive_seed(self.rng_seed, 2 * step + 1), &mut timing);

        let t = Instant::now();
        let (best, histogram, error) = match eval {
            Ok(results) => {
                let scored = score_all(&candidates, &seed, &results, &cfg.score);
                let best = best_index(&scored).ok().map(|i| scored[i]);
                (best, histogram(&scored), None)
            }
            Err(e) => {
                log::warn!("evaluation failed at step {step}: {e}");
                (None, vec![0; HISTOGRAM_BINS], Some(e.to_string()))
            }
        };
        let best_score = best.map_or(f64::NEG_INFINITY, |b| b.score);
        if cfg.adaptive {
            self.state.region = update_scale(&self.state.region, best_score);
        }
        timing.score_ms = ms(t);
        self.state.last_best = best;

        let is_good = best_score > good;
        let mut target = self.last_target.unwrap_or(*tool);
        match self.state.phase {
            Phase::HandoverInit => {
                if let (true, Some(b)) = (is_good, best) {
                    self.accept(&b);
                    self.state.phase = Phase::Track;
                    target = pre_grasp_of(&self.state.filtered.expect("filtered"), cfg.standoff);
                } else {
                    target = *tool;
                }
            }
            Phase::Track | Phase::Lost => {
                if let Some(b) = best {
                    self.accept(&b);
                }
                let at_max = !cfg.adaptive || self.state.region.is_at_max();
                if is_good {
                    self.state.bad_at_max = 0;
                    if self.state.phase == Phase::Lost {
                        self.state.phase = Phase::Track;
                    }
                } else if at_max {
                    self.state.bad_at_max += 1;
                } else {
                    self.state.bad_at_max = 0;
                }
                if self.state.phase == Phase::Track && self.state.bad_at_max >= cfg.lost_frames {
                    self.state.phase = Phase::Lost;
                    self.state.in_tol_count = 0;
                }
                if let Some(filtered) = self.state.filtered {
                    target = pre_grasp_of(&filtered, cfg.standoff);
                }
                if self.state.phase == Phase::Lost {
                    target = *tool;
                } else {
                    self.update_commit(tool, &target, is_good, allow_commit);
                }
            }
            Phase::Approach | Phase::Closed => unreachable!(),
        }

        let t = Instant::now();
        self.state.pending_bias = Vector3::zeros();
        if cfg.use_flow {
            if let (Some(provider), Some(prev)) = (flow, self.prev_frame.as_ref()) {
                match provider.flow2d(prev, frame) {
                    Ok(f) => {
                        let lifted = lift_flow(&f, prev, frame);
                        self.state.pending_bias = seed_bias(&lifted, &self.state.seed, &cfg.flow, cfg.loop_dt);
                    }
                    Err(e) => log::warn!("flow failed at step {step}: {e}"),
                }
            }
        }
        timing.flow_ms = ms(t);

        if self.state.phase == Phase::Approach {
            // Commit happened this frame: the first waypoint is issued now.
            return self.approach_step_inner(frame, tool, timing, start, scene.len(), histogram, error, candidates.len());
        }
        self.last_target = Some(target);
        timing.total_ms = ms(start);
        self.prev_frame = Some(frame.clone());
        let telemetry = self.telemetry(frame, tool, target, scene.len(), candidates.len(), histogram, error, timing);
        StepOutput {
            target,
            open_loop: false,
            telemetry,
        }
    }

    fn evaluate(
        &self,
        candidates: &[Pose],
        scene: &PointCloud,
        evaluator: &dyn Evaluator,
        seed: u64,
        timing: &mut StageTiming,
    ) -> Result<Vec<EvaluationResult>> {
        let t = Instant::now();
        let batch = evaluator::build_batch(candidates, scene, &self.gripper_points, &self.config.evaluator, seed)?;
        timing.batch_ms = ms(t);
        let t = Instant::now();
        let scores = evaluator.quality(&batch);
        timing.inference_ms = ms(t);
        evaluator::reduce_scores(&scores?, self.config.evaluator.k, candidates.len())
    }

    /// Adopts `best` as the next seed and feeds it to the output filter.
    fn accept(&mut self, best: &ScoredGrasp) {
        let (filter, filtered) = filter_pose(&self.state.filter, &best.pose, self.config.loop_dt);
        self.state.filter = filter;
        self.state.filtered = Some(filtered);
        self.state.seed = best.pose;
    }

    fn update_commit(&mut self, tool: &Pose, pre_grasp: &Pose, is_good: bool, allow_commit: bool) {
        let cfg = &self.config;
        let in_tol = is_good
            && translation_distance(tool, pre_grasp) <= cfg.commit_tol_t
            && rotation_angle(tool, pre_grasp) <= cfg.commit_tol_r;
        self.state.in_tol_count = if in_tol {
            (self.state.in_tol_count + 1).min(cfg.commit_count)
        } else {
            0
        };
        if self.state.in_tol_count >= cfg.commit_count && allow_commit {
            let grasp = self.state.filtered.expect("filtered pose while tracking");
            self.state.committed = Some(grasp);
            self.state.approach_path = approach_path(tool, &grasp, cfg.approach_steps());
            self.state.approach_index = 0;
            self.state.phase = Phase::Approach;
        }
    }

    fn approach_step(&mut self, frame: &DepthFrame, tool: &Pose, timing: StageTiming, start: Instant) -> StepOutput {
        self.approach_step_inner(frame, tool, timing, start, 0, vec![0; HISTOGRAM_BINS], None, 0)
    }

    #[allow(clippy::too_many_arguments)]
    fn approach_step_inner(
        &mut self,
        frame: &DepthFrame,
        tool: &Pose,
        mut timing: StageTiming,
        start: Instant,
        scene_points: usize,
        histogram: Vec<u32>,
        error: Option<String>,
        n_candidates: usize,
    ) -> StepOutput {
        let path = &self.state.approach_path;
        let target = path[self.state.approach_index.min(path.len() - 1)];
        self.state.approach_index += 1;
        if self.state.approach_index >= path.len() {
            self.state.phase = Phase::Closed;
        }
        self.last_target = Some(target);
        self.prev_frame = Some(frame.clone());
        timing.total_ms = ms(start);
        let telemetry = self.telemetry(frame, tool, target, scene_points, n_candidates, histogram, error, timing);
        StepOutput {
            target,
            open_loop: true,
            telemetry,
        }
    }

    fn passive_output(
        &mut self,
        frame: &DepthFrame,
        tool: &Pose,
        target: Pose,
        open_loop: bool,
        mut timing: StageTiming,
        start: Instant,
    ) -> StepOutput {
        timing.total_ms = ms(start);
        let telemetry = self.telemetry(frame, tool, target, 0, 0, vec![0; HISTOGRAM_BINS], None, timing);
        StepOutput {
            target,
            open_loop,
            telemetry,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn telemetry(
        &self,
        frame: &DepthFrame,
        tool: &Pose,
        target: Pose,
        scene_points: usize,
        n_candidates: usize,
        score_histogram: Vec<u32>,
        error: Option<String>,
        timing: StageTiming,
    ) -> Telemetry {
        Telemetry {
            t: frame.timestamp,
            step: self.state.step_index - 1,
            phase: self.state.phase,
            seed: self.state.seed,
            best: self.state.last_best.map(BestSummary::from),
            filtered: self.state.filtered,
            target,
            tool: *tool,
            region_scale: self.state.region.scale,
            n_candidates,
            bias: self.state.pending_bias,
            in_tol_count: self.state.in_tol_count,
            scene_points,
            score_histogram,
            error,
            timing: Some(timing),
        }
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn histogram(scored: &[ScoredGrasp]) -> Vec<u32> {
    let mut h = vec![0u32; HISTOGRAM_BINS];
    for s in scored {
        let bin = if s.score < 0.0 {
            0
        } else {
            1 + ((s.score * 10.0) as usize).min(9)
        };
        h[bin] += 1;
    }
    h
}

pub fn handover_seed(tool: &Pose, offset: f64) -> Pose {
    compose(tool, &Pose::translate(0.0, 0.0, offset))
}

/// The grasp backed off by `standoff` along its own approach axis.
pub fn pre_grasp_of(grasp: &Pose, standoff: f64) -> Pose {
    assert!(standoff > 0.0, "standoff must be positive");
    compose(grasp, &Pose::translate(0.0, 0.0, -standoff))
}

/// `steps` evenly spaced poses from `from` (exclusive) to `to` (inclusive).
pub fn approach_path(from: &Pose, to: &Pose, steps: usize) -> Vec<Pose> {
    let q0 = from.quaternion();
    let q1 = to.quaternion();
    (1..=steps)
        .map(|i| {
            let s = i as f64 / steps as f64;
            let t = from.translation() + (to.translation() - from.translation()) * s;
            let q = q0.try_slerp(&q1, s, 1e-12).unwrap_or_else(|| q0.nlerp(&q1, s));
            if i == steps {
                *to
            } else {
                Pose::from_quaternion(q, t)
            }
        })
        .collect()
}

/// One proportional servo step toward `target`, clamped in linear and angular
/// speed and never past the target.
pub fn servo_step(tool: &Pose, target: &Pose, cfg: &ServoConfig, dt: f64) -> Pose {
    let err = target.translation() - tool.translation();
    let dist = err.norm();
    let mut translation = *tool.translation();
    if dist > 0.0 {
        let step = (cfg.kp * dist).min(cfg.v_max) * dt;
        translation += err * (step.min(dist) / dist);
    }

    let r_err = Rotation3::from_matrix_unchecked(target.rotation() * tool.rotation().transpose());
    let rotation = match r_err.axis_angle() {
        Some((axis, angle)) if angle > 0.0 => {
            let step = ((cfg.kp * angle).min(cfg.w_max) * dt).min(angle);
            let delta = UnitQuaternion::from_axis_angle(&axis, step);
            *delta.to_rotation_matrix().matrix() * tool.rotation()
        }
        _ => {
            // Zero error, or an exact half turn where the axis is ill defined.
            if rotation_angle(tool, target) > 1e-9 {
                let delta = Rotation3::from_axis_angle(&Vector3::z_axis(), (cfg.w_max * dt).min(std::f64::consts::PI));
                delta.matrix() * tool.rotation()
            } else {
                *tool.rotation()
            }
        }
    };
    Pose::new(rotation, translation)
}
