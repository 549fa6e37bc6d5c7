//! Experiment protocols: static refinement, turntable tracking and handover.

use anyhow::{Context, Result};
use grasptrack_core::rng::{self, derive_seed, Rng};
use grasptrack_core::se3::{euler_to_pose, EulerPerturbation, Pose};
use grasptrack_core::tracker::{StageTiming, Telemetry};
use grasptrack_sim::family::{oracle_best_grasp_with, OracleQuery};
use grasptrack_sim::motion::{sample_turntable_extent, MotionScript};
use grasptrack_sim::oracle::adjudicate_with;
use grasptrack_sim::scene::{Scene, SceneObject};
use nalgebra::{Rotation3, Vector3};
use rand::RngExt;
use rand_distr::{Distribution, UnitBall, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Perturbation};
use crate::episode::{Backend, CommitPolicy, Episode, EpisodeResult, Outcome, Start};
use crate::stats::{median, percentile, wilson_interval};

const STATIC_STREAM: u64 = 0x5747;
const TURNTABLE_STREAM: u64 = 0x7475;
const HANDOVER_STREAM: u64 = 0x4841;

/// Per-trial record; everything here is reproducible from config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub trial: usize,
    pub rng_seed: u64,
    pub adaptive: bool,
    pub flow: bool,
    pub outcome: Outcome,
    /// Open-loop execution of the initial seed, where the protocol has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_success: Option<bool>,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_time: Option<f64>,
    pub telemetry: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub scenario: String,
    pub trial: usize,
    pub steps: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub protocol: String,
    pub scenario: String,
    pub arm: String,
    pub radius: f64,
    pub speed_cm_s: f64,
    pub adaptive: bool,
    pub flow: bool,
    pub trials: usize,
    pub successes: usize,
    pub lost: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SummaryRow {
    pub fn new(protocol: &str, scenario: &str, arm: &str, successes: usize, lost: usize, trials: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials);
        Self {
            protocol: protocol.into(),
            scenario: scenario.into(),
            arm: arm.into(),
            radius: 0.0,
            speed_cm_s: 0.0,
            adaptive: false,
            flow: false,
            trials,
            successes,
            lost,
            rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            ci_low,
            ci_high,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub summary: Vec<SummaryRow>,
    pub records: Vec<TrialRecord>,
    pub timings: Vec<TrialTiming>,
    /// Telemetry file name and its frames, one per trial.
    pub traces: Vec<(String, Vec<Telemetry>)>,
}

impl RunOutput {
    pub fn push_trial(&mut self, mut record: TrialRecord, result: EpisodeResult) {
        let name = format!("{}_{:04}.jsonl", record.scenario, record.trial);
        record.telemetry = format!("trials/{name}");
        record.frames = result.frames.len();
        record.close_time = result.close_time;
        let totals: Vec<f64> = result.timing.iter().map(|t: &StageTiming| t.total_ms).collect();
        self.timings.push(TrialTiming {
            scenario: record.scenario.clone(),
            trial: record.trial,
            steps: totals.len(),
            median_ms: median(&totals),
            p95_ms: percentile(&totals, 95.0),
        });
        self.records.push(record);
        self.traces.push((name, result.frames));
    }
}

/// Overrides taken from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArmOverride {
    pub adaptive: Option<bool>,
    pub flow: Option<bool>,
    pub trials: Option<usize>,
}

/// Random rigid offset: translation uniform in a ball, rotation about a
/// uniform axis by a uniform angle.
pub fn sample_perturbation(rng: &mut Rng, p: &Perturbation) -> Pose {
    let [x, y, z]: [f64; 3] = UnitBall.sample(rng);
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..=p.perturb_rotation_deg.to_radians());
    let rot = Rotation3::new(Vector3::from(axis) * angle);
    Pose::from_rotation(rot, Vector3::new(x, y, z) * p.perturb_translation)
}

/// Oracle grasp nearest a top-down approach with a random roll.
pub fn reference_grasp(scene: &Scene, obj: &SceneObject, depth: f64, rng: &mut Rng, cfg: &ExperimentConfig) -> Result<Pose> {
    let top = obj.pose.translation().z + obj.shape.rest_height();
    let c = obj.pose.translation();
    let roll = rng.random_range(0.0..std::f64::consts::TAU);
    let near = Pose::translate(c.x, c.y, top - depth) * Pose::rot_x(std::f64::consts::PI) * Pose::rot_z(roll);
    oracle_best_grasp_with(scene, &near, &OracleQuery::within(0.05), &cfg.tracker.gripper, &cfg.oracle)
        .context("no reference grasp on the object")
}

pub fn arm_name(adaptive: bool, flow: bool) -> String {
    match (adaptive, flow) {
        (true, true) => "adaptive".into(),
        (false, false) => "fixed".into(),
        (true, false) => "scaling_only".into(),
        (false, true) => "flow_only".into(),
    }
}

/// Paired trials on static objects: open-loop execution of a perturbed
/// reference grasp against closed-loop tracking from the same seed.
pub fn run_static(cfg: &ExperimentConfig, ov: ArmOverride) -> Result<RunOutput> {
    let p = &cfg.static_protocol;
    let trials = ov.trials.unwrap_or(p.trials);
    let mut tracker = cfg.tracker;
    tracker.adaptive = ov.adaptive.unwrap_or(tracker.adaptive);
    tracker.use_flow = ov.flow.unwrap_or(tracker.use_flow);
    let backend = Backend::from_config(cfg)?;
    let base = derive_seed(cfg.seed, STATIC_STREAM);
    let mut out = RunOutput::default();
    let (mut total_base, mut total_loop) = (0, 0);
    for (oi, spec) in p.objects.iter().enumerate() {
        let obj = spec.place(1, 0.0, 0.0);
        let scene = Scene::new(vec![obj]);
        let scenario = format!("static_obj{oi}");
        let (mut n_base, mut n_loop, mut n_lost) = (0, 0, 0);
        for trial in 0..trials {
            let trial_seed = derive_seed(derive_seed(base, oi as u64), trial as u64);
            let mut r = rng::rng_from_seed(trial_seed);
            let reference = reference_grasp(&scene, &obj, p.grasp_depth, &mut r, cfg)?;
            let seed = reference * sample_perturbation(&mut r, &p.perturbation());
            let baseline = adjudicate_with(&scene, &seed, &tracker.gripper, &cfg.oracle).success;
            let episode = Episode {
                initial: scene.clone(),
                script: MotionScript::Static,
                tracker,
                camera: cfg.camera,
                oracle: cfg.oracle,
                start: Start::Seed(seed),
                rng_seed: derive_seed(trial_seed, 1),
                commit: CommitPolicy::Always,
                timeout: p.timeout,
                track_timeout: None,
            };
            let result = episode.run(&backend)?;
            n_base += baseline as usize;
            n_loop += (result.outcome == Outcome::Success) as usize;
            n_lost += (result.outcome == Outcome::Lost) as usize;
            out.push_trial(
                TrialRecord {
                    scenario: scenario.clone(),
                    trial,
                    rng_seed: trial_seed,
                    adaptive: tracker.adaptive,
                    flow: tracker.use_flow,
                    outcome: result.outcome,
                    baseline_success: Some(baseline),
                    frames: 0,
                    close_time: None,
                    telemetry: String::new(),
                },
                result,
            );
        }
        out.summary.push(SummaryRow::new("static", &scenario, "baseline", n_base, 0, trials));
        let mut row = SummaryRow::new("static", &scenario, "closed_loop", n_loop, n_lost, trials);
        row.adaptive = tracker.adaptive;
        row.flow = tracker.use_flow;
        out.summary.push(row);
        total_base += n_base;
        total_loop += n_loop;
    }
    let n = trials * p.objects.len();
    out.summary.push(SummaryRow::new("static", "total", "baseline", total_base, 0, n));
    let mut row = SummaryRow::new("static", "total", "closed_loop", total_loop, 0, n);
    row.lost = out.summary.iter().filter(|r| r.arm == "closed_loop").map(|r| r.lost).sum();
    row.adaptive = tracker.adaptive;
    row.flow = tracker.use_flow;
    out.summary.push(row);
    Ok(out)
}

/// Turntable trials: for every radius and arm, the object starts moving after
/// a short delay, turns by a random extent and stops; the grasp counts only
/// if it is committed after the stop and the oracle accepts it.
pub fn run_turntable(cfg: &ExperimentConfig, ov: ArmOverride) -> Result<RunOutput> {
    let p = &cfg.turntable;
    let trials = ov.trials.unwrap_or(p.trials);
    let arms: Vec<(bool, bool)> = match ov.adaptive {
        Some(a) => vec![(a, ov.flow.unwrap_or(a))],
        None => p.arms.iter().map(|&a| (a, ov.flow.unwrap_or(a))).collect(),
    };
    let backend = Backend::from_config(cfg)?;
    let base = derive_seed(cfg.seed, TURNTABLE_STREAM);
    let mut out = RunOutput::default();
    for (ri, &radius) in p.radii.iter().enumerate() {
        let obj = p.object.place(1, radius, 0.0);
        let scene = Scene::new(vec![obj]);
        for &(adaptive, flow) in &arms {
            let arm = arm_name(adaptive, flow);
            let scenario = format!("turntable_r{:03}_{arm}", (radius * 100.0).round() as i64);
            let mut tracker = cfg.tracker;
            tracker.adaptive = adaptive;
            tracker.use_flow = flow;
            let (mut wins, mut lost) = (0, 0);
            for trial in 0..trials {
                // Both arms replay the same draws for a given radius and trial.
                let trial_seed = derive_seed(derive_seed(base, ri as u64), trial as u64);
                let mut r = rng::rng_from_seed(trial_seed);
                let (extent, direction) =
                    sample_turntable_extent(&mut r, p.extent_min_deg.to_radians(), p.extent_max_deg.to_radians());
                let reference = reference_grasp(&scene, &obj, p.grasp_depth, &mut r, cfg)?;
                let perturbation = Perturbation {
                    perturb_translation: p.perturb_translation,
                    perturb_rotation_deg: p.perturb_rotation_deg,
                };
                let seed = reference * sample_perturbation(&mut r, &perturbation);
                let script = MotionScript::Turntable {
                    radius,
                    omega: p.omega,
                    extent,
                    direction,
                    center: [0.0, 0.0],
                    start: p.start_delay,
                };
                let settle = script.settle_time().unwrap_or(0.0);
                let episode = Episode {
                    initial: scene.clone(),
                    script,
                    tracker,
                    camera: cfg.camera,
                    oracle: cfg.oracle,
                    start: Start::Seed(seed),
                    rng_seed: derive_seed(trial_seed, 1),
                    commit: CommitPolicy::WhenSettled,
                    timeout: settle + p.settle_timeout,
                    track_timeout: None,
                };
                let result = episode.run(&backend)?;
                wins += (result.outcome == Outcome::Success) as usize;
                lost += (result.outcome == Outcome::Lost) as usize;
                out.push_trial(
                    TrialRecord {
                        scenario: scenario.clone(),
                        trial,
                        rng_seed: trial_seed,
                        adaptive,
                        flow,
                        outcome: result.outcome,
                        baseline_success: None,
                        frames: 0,
                        close_time: None,
                        telemetry: String::new(),
                    },
                    result,
                );
            }
            let mut row = SummaryRow::new("turntable", &scenario, &arm, wins, lost, trials);
            row.radius = radius;
            row.speed_cm_s = radius * p.omega * 100.0;
            row.adaptive = adaptive;
            row.flow = flow;
            out.summary.push(row);
        }
    }
    Ok(out)
}

/// Tool pose from `[x, y, z, roll, pitch, yaw]`, angles in degrees.
pub fn tool_pose(v: &[f64; 6]) -> Pose {
    euler_to_pose(&EulerPerturbation::new(
        v[3].to_radians(),
        v[4].to_radians(),
        v[5].to_radians(),
        Vector3::new(v[0], v[1], v[2]),
    ))
}

/// Free-floating object positioned so the handover seed is a top-down grasp
/// on it, shifted by the configured offsets.
pub fn handover_scene(cfg: &ExperimentConfig, extra: Vector3<f64>) -> Scene {
    let p = &cfg.handover;
    let tool = tool_pose(&p.tool);
    let seed = grasptrack_core::tracker::handover_seed(&tool, cfg.tracker.handover_seed_offset);
    let depth = cfg.static_protocol.grasp_depth;
    let center = seed.transform_point(&Vector3::new(0.0, 0.0, p.object.shape.rest_height() - depth));
    let offset = Vector3::from(p.object.position.unwrap_or([0.0; 3])) + extra;
    let pose = Pose::from_translation(center + offset) * Pose::new(*seed.rotation(), Vector3::zeros()) * Pose::rot_x(std::f64::consts::PI);
    let mut scene = Scene::new(vec![SceneObject {
        id: 1,
        shape: p.object.shape,
        pose: pose * Pose::rot_z(p.object.yaw_deg.to_radians()),
    }]);
    scene.table = None;
    scene
}

/// Scripted handover: the object wanders near the waiting gripper; a trial
/// succeeds when the gripper closes on a valid grasp within the tracking
/// time limit.
pub fn run_handover(cfg: &ExperimentConfig, ov: ArmOverride) -> Result<RunOutput> {
    let p = &cfg.handover;
    let trials = ov.trials.unwrap_or(p.trials);
    let mut tracker = cfg.tracker;
    tracker.adaptive = ov.adaptive.unwrap_or(tracker.adaptive);
    tracker.use_flow = ov.flow.unwrap_or(tracker.use_flow);
    let backend = Backend::from_config(cfg)?;
    let base = derive_seed(cfg.seed, HANDOVER_STREAM);
    let tool = tool_pose(&p.tool);
    let mut out = RunOutput::default();
    let (mut wins, mut lost) = (0, 0);
    for trial in 0..trials {
        let trial_seed = derive_seed(base, trial as u64);
        let mut r = rng::rng_from_seed(trial_seed);
        let dir: [f64; 3] = UnitSphere.sample(&mut r);
        let scene = handover_scene(cfg, Vector3::from(dir) * p.start_offset);
        let script = if p.speed_max > 0.0 || p.rot_max > 0.0 {
            MotionScript::RandomWalk {
                speed_max: p.speed_max,
                rot_max: p.rot_max,
                seed: derive_seed(trial_seed, 2),
            }
        } else {
            MotionScript::Static
        };
        let episode = Episode {
            initial: scene,
            script,
            tracker,
            camera: cfg.camera,
            oracle: cfg.oracle,
            start: Start::Handover(tool),
            rng_seed: derive_seed(trial_seed, 1),
            commit: CommitPolicy::Always,
            timeout: p.init_timeout + p.track_timeout,
            track_timeout: Some(p.track_timeout),
        };
        let mut result = episode.run(&backend)?;
        if result.track_start.is_none() {
            result.outcome = Outcome::Lost;
        }
        wins += (result.outcome == Outcome::Success) as usize;
        lost += (result.outcome == Outcome::Lost) as usize;
        out.push_trial(
            TrialRecord {
                scenario: "handover".into(),
                trial,
                rng_seed: trial_seed,
                adaptive: tracker.adaptive,
                flow: tracker.use_flow,
                outcome: result.outcome,
                baseline_success: None,
                frames: 0,
                close_time: None,
                telemetry: String::new(),
            },
            result,
        );
    }
    let mut row = SummaryRow::new("handover", "handover", &arm_name(tracker.adaptive, tracker.use_flow), wins, lost, trials);
    row.speed_cm_s = p.speed_max * 100.0;
    row.adaptive = tracker.adaptive;
    row.flow = tracker.use_flow;
    out.summary.push(row);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use grasptrack_core::se3::{rotation_angle, translation_distance};

    #[test]
    fn perturbation_respects_bounds() {
        let mut r = rng::rng_from_seed(5);
        let p = Perturbation::default();
        let mut max_t: f64 = 0.0;
        for _ in 0..2000 {
            let d = sample_perturbation(&mut r, &p);
            let t = translation_distance(&d, &Pose::identity());
            assert!(t <= p.perturb_translation + 1e-15);
            assert!(rotation_angle(&d, &Pose::identity()) <= p.perturb_rotation_deg.to_radians() + 1e-12);
            max_t = max_t.max(t);
        }
        assert!(max_t > 0.9 * p.perturb_translation);
    }

    #[test]
    fn zero_perturbation_baseline_always_succeeds() {
        let mut cfg = ExperimentConfig::default();
        cfg.static_protocol.perturb_translation = 0.0;
        cfg.static_protocol.perturb_rotation_deg = 0.0;
        let obj = cfg.static_protocol.objects[0].place(1, 0.0, 0.0);
        let scene = Scene::new(vec![obj]);
        let mut r = rng::rng_from_seed(1);
        for _ in 0..10 {
            let g = reference_grasp(&scene, &obj, 0.02, &mut r, &cfg).unwrap();
            let seed = g * sample_perturbation(&mut r, &cfg.static_protocol.perturbation());
            assert!(adjudicate_with(&scene, &seed, &cfg.tracker.gripper, &cfg.oracle).success);
        }
    }

    #[test]
    fn handover_seed_is_a_grasp_on_the_object() {
        let cfg = ExperimentConfig::default();
        let scene = handover_scene(&cfg, Vector3::zeros());
        let tool = tool_pose(&cfg.handover.tool);
        let seed = grasptrack_core::tracker::handover_seed(&tool, cfg.tracker.handover_seed_offset);
        assert!(adjudicate_with(&scene, &seed, &cfg.tracker.gripper, &cfg.oracle).success);
    }
}
