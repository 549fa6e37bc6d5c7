//! Tracker step-rate benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::Result;
use grasptrack_core::rng::{self, derive_seed};
use grasptrack_core::tracker::{StageTiming, Tracker};
use grasptrack_sim::camera::{render_depth, SyntheticFlowProvider};
use grasptrack_sim::motion::{step_scene, MotionScript};
use grasptrack_sim::scene::Scene;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::episode::Backend;
use crate::protocols::reference_grasp;
use crate::stats::{median, percentile};

const BENCH_STREAM: u64 = 0x4245;

pub const BENCH_HEADER: &str = "step,scene_points,candidates,cloud_ms,sample_ms,batch_ms,inference_ms,score_ms,flow_ms,total_ms,wall_ms";

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BenchStep {
    pub scene_points: usize,
    pub candidates: usize,
    pub stages: StageTiming,
    /// Wall time of the whole `Tracker::step` call.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub n: usize,
    pub k: usize,
    pub cloud_points: usize,
    pub evaluator: String,
    pub steps: Vec<BenchStep>,
}

impl BenchReport {
    fn column(&self, f: impl Fn(&BenchStep) -> f64) -> Vec<f64> {
        self.steps.iter().map(f).collect()
    }

    pub fn median_ms(&self) -> f64 {
        median(&self.column(|s| s.wall_ms))
    }

    pub fn p95_ms(&self) -> f64 {
        percentile(&self.column(|s| s.wall_ms), 95.0)
    }

    pub fn per_step_csv(&self) -> String {
        let mut s = String::from(BENCH_HEADER);
        s.push('\n');
        for (i, b) in self.steps.iter().enumerate() {
            let t = &b.stages;
            writeln!(
                s,
                "{i},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                b.scene_points, b.candidates, t.cloud_ms, t.sample_ms, t.batch_ms, t.inference_ms, t.score_ms, t.flow_ms, t.total_ms, b.wall_ms
            )
            .unwrap();
        }
        s
    }

    /// Median and p95 for every stage.
    pub fn stage_csv(&self) -> String {
        let stages: [(&str, fn(&BenchStep) -> f64); 8] = [
            ("cloud", |b| b.stages.cloud_ms),
            ("sample", |b| b.stages.sample_ms),
            ("batch", |b| b.stages.batch_ms),
            ("inference", |b| b.stages.inference_ms),
            ("score", |b| b.stages.score_ms),
            ("flow", |b| b.stages.flow_ms),
            ("total", |b| b.stages.total_ms),
            ("wall", |b| b.wall_ms),
        ];
        let mut s = String::from("stage,median_ms,p95_ms,n,k,cloud_points,evaluator\n");
        for (name, f) in stages {
            let v = self.column(f);
            writeln!(
                s,
                "{name},{:.4},{:.4},{},{},{},{}",
                median(&v),
                percentile(&v, 95.0),
                self.n,
                self.k,
                self.cloud_points,
                self.evaluator
            )
            .unwrap();
        }
        s
    }
}

/// Runs the tracker on a slowly turning can with commits disabled and times
/// every step after the warmup.
pub fn bench_rate(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let b = cfg.bench;
    let mut tracker_cfg = cfg.tracker;
    tracker_cfg.sampler.n_nominal = b.n;
    tracker_cfg.evaluator.k = b.k;
    tracker_cfg.cloud.max_points = b.cloud_points;
    tracker_cfg.validate()?;
    let backend = Backend::from_config(cfg)?;
    let seed = derive_seed(cfg.seed, BENCH_STREAM);
    let obj = cfg.turntable.object.place(1, 0.10, 0.0);
    let initial = Scene::new(vec![obj]);
    let mut r = rng::rng_from_seed(seed);
    let grasp = reference_grasp(&initial, &obj, cfg.turntable.grasp_depth, &mut r, cfg)?;
    let script = MotionScript::Turntable {
        radius: 0.10,
        omega: 0.1,
        extent: 1e3,
        direction: 1.0,
        center: [0.0, 0.0],
        start: 0.0,
    };
    let mut tracker = Tracker::new(tracker_cfg, grasp, derive_seed(seed, 1))?;
    let mut tool = grasptrack_core::tracker::pre_grasp_of(&grasp, tracker_cfg.standoff);
    let mut flow = SyntheticFlowProvider::new();
    let mut steps = Vec::with_capacity(b.steps);
    let dt = tracker_cfg.loop_dt;
    for i in 0..b.warmup + b.steps {
        let t = i as f64 * dt;
        let scene = step_scene(&initial, &script, t);
        let render = render_depth(&scene, &cfg.camera.pose_in_world(&tool), &cfg.camera, t);
        flow.record(t, &scene);
        backend.sync(&scene);
        let provider: Option<&mut dyn grasptrack_core::flow::FlowProvider> =
            if tracker_cfg.use_flow { Some(&mut flow) } else { None };
        let start = Instant::now();
        let out = tracker.step(&render.frame, &tool, backend.evaluator(), provider, false);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        tool = grasptrack_core::tracker::servo_step(&tool, &out.target, &tracker_cfg.servo, dt);
        if i >= b.warmup {
            steps.push(BenchStep {
                scene_points: out.telemetry.scene_points,
                candidates: out.telemetry.n_candidates,
                stages: out.telemetry.timing.unwrap_or_default(),
                wall_ms,
            });
        }
    }
    Ok(BenchReport {
        n: b.n,
        k: b.k,
        cloud_points: b.cloud_points,
        evaluator: backend.evaluator().name().to_string(),
        steps,
    })
}
