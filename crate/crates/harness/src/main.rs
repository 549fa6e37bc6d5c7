use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use grasptrack_harness::bench::bench_rate;
use grasptrack_harness::bridge::{run_handover_bridge, serve_bridge, BridgeServer, LiveSim};
use grasptrack_harness::config::{EvaluatorKind, ExperimentConfig};
use grasptrack_harness::dataset::gen_dataset;
use grasptrack_harness::output::write_run;
use grasptrack_harness::protocols::{run_handover, run_static, run_turntable, ArmOverride, RunOutput};
use log::info;

#[derive(Parser)]
#[command(name = "grasptrack", version, about = "Closed-loop grasp tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static objects: open-loop seeds against closed-loop refinement.
    RunStatic(RunArgs),
    /// Objects on a turntable, adaptive sampling on and off.
    RunTurntable(RunArgs),
    /// Object handed to a waiting gripper.
    RunHandover {
        #[command(flatten)]
        run: RunArgs,
        /// Take object motion from a bridge client instead of the scripted walk.
        #[arg(long)]
        bridge: bool,
        /// Bridge listen address, overriding the config.
        #[arg(long)]
        address: Option<String>,
    },
    /// Per-step timing of the tracker loop.
    BenchRate(CommonArgs),
    /// Live handover world streamed to one WebSocket client.
    ServeBridge {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        address: Option<String>,
    },
    /// Labeled grasp crops for evaluator training.
    GenDataset(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorArg {
    Oracle,
    Heuristic,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    evaluator: Option<EvaluatorArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    adaptive: Option<Switch>,
    #[arg(long, value_enum)]
    flow: Option<Switch>,
    #[arg(long)]
    trials: Option<usize>,
}

impl RunArgs {
    fn arms(&self) -> ArmOverride {
        ArmOverride {
            adaptive: self.adaptive.map(bool::from),
            flow: self.flow.map(bool::from),
            trials: self.trials,
        }
    }
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match args.evaluator {
        Some(EvaluatorArg::Oracle) => cfg.evaluator = EvaluatorKind::Oracle,
        Some(EvaluatorArg::Heuristic) => cfg.evaluator = EvaluatorKind::Heuristic,
        None => {}
    }
    Ok(cfg)
}

fn finish(dir: &Path, out: &RunOutput, cfg: &ExperimentConfig) -> Result<()> {
    write_run(dir, out, cfg.seed, &cfg.digest())?;
    for row in &out.summary {
        println!(
            "{:<10} {:<28} {:<12} {:>3}/{:<3} {:>6.1}%  [{:.1}, {:.1}]",
            row.protocol,
            row.scenario,
            row.arm,
            row.successes,
            row.trials,
            100.0 * row.rate,
            100.0 * row.ci_low,
            100.0 * row.ci_high
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::RunStatic(args) => {
            let cfg = load(&args.common)?;
            let out = run_static(&cfg, args.arms())?;
            finish(&args.common.out, &out, &cfg)
        }
        Command::RunTurntable(args) => {
            let cfg = load(&args.common)?;
            let out = run_turntable(&cfg, args.arms())?;
            finish(&args.common.out, &out, &cfg)
        }
        Command::RunHandover { run, bridge, address } => {
            let cfg = load(&run.common)?;
            let out = if bridge {
                let addr = address.unwrap_or_else(|| cfg.bridge.address.clone());
                let server = BridgeServer::bind(&addr, cfg.bridge.queue)?;
                println!("waiting for a client on ws://{}", server.local_addr());
                run_handover_bridge(&cfg, run.arms(), &server, None)?
            } else {
                run_handover(&cfg, run.arms())?
            };
            finish(&run.common.out, &out, &cfg)
        }
        Command::BenchRate(args) => {
            let cfg = load(&args)?;
            let report = bench_rate(&cfg)?;
            std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
            std::fs::write(args.out.join("timing.csv"), report.per_step_csv())?;
            std::fs::write(args.out.join("stages.csv"), report.stage_csv())?;
            print!("{}", report.stage_csv());
            println!(
                "{} steps, N={} k={} cloud={} evaluator={}: median {:.2} ms, p95 {:.2} ms",
                report.steps.len(),
                report.n,
                report.k,
                report.cloud_points,
                report.evaluator,
                report.median_ms(),
                report.p95_ms()
            );
            Ok(())
        }
        Command::ServeBridge { common, address } => {
            let cfg = load(&common)?;
            let addr = address.unwrap_or_else(|| cfg.bridge.address.clone());
            let server = BridgeServer::bind(&addr, cfg.bridge.queue)?;
            println!("serving on ws://{}", server.local_addr());
            let mut sim = LiveSim::new(&cfg)?;
            info!("loop period {:?}", Duration::from_secs_f64(cfg.tracker.loop_dt));
            serve_bridge(&server, &mut sim, &|_| false)
        }
        Command::GenDataset(args) => {
            let cfg = load(&args)?;
            let summary = gen_dataset(&cfg, &args.out)?;
            let positives = summary
                .entries
                .iter()
                .filter(|e| e.label == grasptrack_harness::dataset::Label::Positive)
                .count();
            println!(
                "{} grasps ({} positive, {} hard negative) in {}, digest {}",
                summary.entries.len(),
                positives,
                summary.entries.len() - positives,
                args.out.display(),
                summary.digest
            );
            Ok(())
        }
    }
}
