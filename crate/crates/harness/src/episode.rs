//! Closed-loop simulation of one grasp attempt.

use anyhow::Result;
use grasptrack_core::evaluator::{Evaluator, HeuristicCloudEvaluator, RemoteEvaluator};
use grasptrack_core::flow::FlowProvider;
use grasptrack_core::se3::Pose;
use grasptrack_core::tracker::{servo_step, Phase, StageTiming, Telemetry, Tracker, TrackerConfig, TrackerState};
use grasptrack_sim::camera::{render_depth, CameraConfig, SyntheticFlowProvider};
use grasptrack_sim::motion::{step_scene, MotionScript};
use grasptrack_sim::oracle::{adjudicate_with, Adjudication, OracleConfig, OracleEvaluator};
use grasptrack_sim::scene::Scene;
use serde::{Deserialize, Serialize};

use crate::config::{EvaluatorKind, ExperimentConfig};

/// Grasp evaluator used by the tracker during an episode.
pub enum Backend {
    Oracle(OracleEvaluator),
    Heuristic(HeuristicCloudEvaluator),
    Remote(RemoteEvaluator),
}

impl Backend {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match &cfg.evaluator {
            EvaluatorKind::Oracle => {
                let mut ev = OracleEvaluator::new(Scene::default(), cfg.tracker.gripper);
                ev.config = cfg.oracle;
                Backend::Oracle(ev)
            }
            EvaluatorKind::Heuristic => {
                let mut hc = cfg.heuristic;
                hc.gripper = cfg.tracker.gripper;
                Backend::Heuristic(HeuristicCloudEvaluator::new(hc))
            }
            EvaluatorKind::Remote(addr) => {
                Backend::Remote(RemoteEvaluator::connect(addr, Some(std::time::Duration::from_secs(5)))?)
            }
        })
    }

    /// Gives a ground-truth evaluator the scene of the current frame.
    pub fn sync(&self, scene: &Scene) {
        if let Backend::Oracle(o) = self {
            o.set_scene(scene);
        }
    }

    pub fn evaluator(&self) -> &dyn Evaluator {
        match self {
            Backend::Oracle(o) => o,
            Backend::Heuristic(h) => h,
            Backend::Remote(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitPolicy {
    Always,
    /// Only once the motion script has come to rest.
    WhenSettled,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Start {
    /// Tracking starts from this seed with the tool at its pre-grasp.
    Seed(Pose),
    /// Handover initialization from the given tool pose.
    Handover(Pose),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// The gripper closed on a grasp the oracle rejects.
    Failure,
    /// Tracking was lost when time ran out.
    Lost,
    /// Still tracking when time ran out.
    Timeout,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Lost => "lost",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub initial: Scene,
    pub script: MotionScript,
    pub tracker: TrackerConfig,
    pub camera: CameraConfig,
    pub oracle: OracleConfig,
    pub start: Start,
    pub rng_seed: u64,
    pub commit: CommitPolicy,
    /// Episode end, seconds of simulated time.
    pub timeout: f64,
    /// When set, the episode also ends this long after tracking begins.
    pub track_timeout: Option<f64>,
}

/// What an observer sees after each tracker step.
pub struct FrameView<'a> {
    pub t: f64,
    pub scene: &'a Scene,
    pub state: &'a TrackerState,
    pub telemetry: &'a Telemetry,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub adjudication: Option<Adjudication>,
    /// Per-frame telemetry with timing removed.
    pub frames: Vec<Telemetry>,
    pub timing: Vec<StageTiming>,
    pub track_start: Option<f64>,
    pub close_time: Option<f64>,
    pub final_tool: Pose,
}

impl Episode {
    pub fn run(&self, backend: &Backend) -> Result<EpisodeResult> {
        self.run_observed(backend, &mut |_| {})
    }

    pub fn run_observed(&self, backend: &Backend, observer: &mut dyn FnMut(&FrameView)) -> Result<EpisodeResult> {
        let dt = self.tracker.loop_dt;
        let (mut tracker, mut tool) = match self.start {
            Start::Seed(seed) => (
                Tracker::new(self.tracker, seed, self.rng_seed)?,
                grasptrack_core::tracker::pre_grasp_of(&seed, self.tracker.standoff),
            ),
            Start::Handover(tool) => (Tracker::new_handover(self.tracker, &tool, self.rng_seed)?, tool),
        };
        let mut flow = SyntheticFlowProvider::new();
        let mut frames = Vec::new();
        let mut timing = Vec::new();
        let mut track_start = match self.start {
            Start::Seed(_) => Some(0.0),
            Start::Handover(_) => None,
        };
        let mut k: u64 = 0;
        loop {
            let t = k as f64 * dt;
            let scene = step_scene(&self.initial, &self.script, t);
            let render = render_depth(&scene, &self.camera.pose_in_world(&tool), &self.camera, t);
            flow.record(t, &scene);
            backend.sync(&scene);
            let allow = match self.commit {
                CommitPolicy::Always => true,
                CommitPolicy::WhenSettled => self.script.is_settled(t),
                CommitPolicy::Never => false,
            };
            let provider: Option<&mut dyn FlowProvider> = if self.tracker.use_flow { Some(&mut flow) } else { None };
            let mut out = tracker.step(&render.frame, &tool, backend.evaluator(), provider, allow);
            timing.push(out.telemetry.timing.take().unwrap_or_default());
            if track_start.is_none() && tracker.phase() == Phase::Track {
                track_start = Some(t);
            }
            observer(&FrameView {
                t,
                scene: &scene,
                state: &tracker.state,
                telemetry: &out.telemetry,
            });
            frames.push(out.telemetry);
            tool = if out.open_loop {
                out.target
            } else {
                servo_step(&tool, &out.target, &self.tracker.servo, dt)
            };
            k += 1;
            let t_next = k as f64 * dt;
            if tracker.phase() == Phase::Closed {
                let scene = step_scene(&self.initial, &self.script, t_next);
                let a = adjudicate_with(&scene, &tool, &self.tracker.gripper, &self.oracle);
                return Ok(EpisodeResult {
                    outcome: if a.success { Outcome::Success } else { Outcome::Failure },
                    adjudication: Some(a),
                    frames,
                    timing,
                    track_start,
                    close_time: Some(t_next),
                    final_tool: tool,
                });
            }
            let track_expired = match (self.track_timeout, track_start) {
                (Some(limit), Some(s)) => t_next >= s + limit - 1e-9,
                _ => false,
            };
            if t_next >= self.timeout - 1e-9 || track_expired {
                let outcome = match tracker.phase() {
                    Phase::Lost | Phase::HandoverInit => Outcome::Lost,
                    _ => Outcome::Timeout,
                };
                return Ok(EpisodeResult {
                    outcome,
                    adjudication: None,
                    frames,
                    timing,
                    track_start,
                    close_time: None,
                    final_tool: tool,
                });
            }
        }
    }
}
