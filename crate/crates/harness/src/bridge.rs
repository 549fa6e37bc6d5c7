//! WebSocket bridge streaming live tracker state to one interactive client.
//!
//! Every message is a JSON object in its own text frame, carrying the schema
//! version `v` and a `type` tag. The server sends `snapshot`, `heartbeat` and
//! `error`; the client sends `command` (move an object) and `control`
//! (`start`, `pause`, `reset` or `{"config_patch": {...}}`).
//!
//! The tracker loop never blocks on the socket: snapshots go through a
//! bounded queue that drops the oldest entry when full, and client messages
//! are drained at frame boundaries.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use crossbeam::queue::ArrayQueue;
use grasptrack_core::flow::FlowProvider;
use grasptrack_core::rng::derive_seed;
use grasptrack_core::se3::Pose;
use grasptrack_core::tracker::{servo_step, Phase, Telemetry, Tracker};
use grasptrack_sim::camera::{render_depth, SyntheticFlowProvider};
use grasptrack_sim::oracle::{adjudicate_with, Adjudication};
use grasptrack_sim::scene::Scene;
use log::{debug, info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::config::ExperimentConfig;
use crate::episode::{Backend, EpisodeResult, Outcome};
use crate::protocols::{arm_name, handover_scene, tool_pose, ArmOverride, RunOutput, SummaryRow, TrialRecord};

pub const PROTOCOL_VERSION: u32 = 1;

const BRIDGE_STREAM: u64 = 0x4252;
const READ_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: u32,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Frame index within the current trial; restarts at 0 on reset.
    pub frame: u64,
    pub trial: u64,
    pub t: f64,
    pub objects: Vec<ObjectState>,
    pub telemetry: Telemetry,
    /// Sequence number of the last client message applied before this frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot(Snapshot),
    /// Sent while waiting for a client or while paused.
    Heartbeat { frame: u64, trial: u64 },
    Error {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Reset,
    /// JSON merge patch over the experiment configuration; applied on the next reset.
    ConfigPatch(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command { seq: u64, object: u32, pose: Pose },
    Control { seq: u64, action: ControlAction },
}

impl ClientMessage {
    pub fn seq(&self) -> u64 {
        match self {
            ClientMessage::Command { seq, .. } | ClientMessage::Control { seq, .. } => *seq,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        body: msg,
    })
    .expect("bridge messages serialize")
}

fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> std::result::Result<T, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(format!("unsupported protocol version {v}, expected {PROTOCOL_VERSION}")),
        None => return Err("missing protocol version field `v`".into()),
    }
    let env: Envelope<T> = serde_json::from_value(value).map_err(|e| format!("invalid message: {e}"))?;
    Ok(env.body)
}

pub fn decode_client(text: &str) -> std::result::Result<ClientMessage, String> {
    decode(text)
}

pub fn decode_server(text: &str) -> std::result::Result<ServerMessage, String> {
    decode(text)
}

/// Listening endpoint plus the two queues shared with the connection thread.
pub struct BridgeServer {
    addr: SocketAddr,
    outgoing: Arc<ArrayQueue<String>>,
    incoming: Arc<ArrayQueue<ClientMessage>>,
    connected: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
    listener: Option<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn bind(addr: &str, queue: usize) -> Result<Self> {
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let outgoing = Arc::new(ArrayQueue::new(queue.max(1)));
        let incoming = Arc::new(ArrayQueue::new(queue.max(1)));
        let connected = Arc::new(AtomicBool::new(false));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (outgoing, incoming, connected, stop) = (outgoing.clone(), incoming.clone(), connected.clone(), stop.clone());
            std::thread::spawn(move || accept_loop(listener, outgoing, incoming, connected, stop))
        };
        info!("bridge listening on ws://{addr}");
        Ok(Self {
            addr,
            outgoing,
            incoming,
            connected,
            stop,
            listener: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_connected(&self) -> bool {
        self.connected.load(Ordering::SeqCst)
    }

    /// Queues a message for the client, evicting the oldest when full.
    /// Returns true when something was dropped.
    pub fn publish(&self, msg: &ServerMessage) -> bool {
        self.outgoing.force_push(encode(msg)).is_some()
    }

    /// Client messages received since the last call, in arrival order.
    pub fn drain(&self) -> Vec<ClientMessage> {
        std::iter::from_fn(|| self.incoming.pop()).collect()
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.listener.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    outgoing: Arc<ArrayQueue<String>>,
    incoming: Arc<ArrayQueue<ClientMessage>>,
    connected: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
) {
    let mut sessions: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if connected.swap(true, Ordering::SeqCst) {
                    debug!("rejecting second client {peer}");
                    std::thread::spawn(move || reject(stream));
                    continue;
                }
                info!("bridge client {peer} connected");
                while outgoing.pop().is_some() {}
                let (outgoing, incoming, connected, stop) = (outgoing.clone(), incoming.clone(), connected.clone(), stop.clone());
                sessions.push(std::thread::spawn(move || {
                    if let Err(e) = session(stream, &outgoing, &incoming, &stop) {
                        debug!("bridge session ended: {e}");
                    }
                    connected.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(READ_POLL),
            Err(e) => {
                warn!("bridge accept failed: {e}");
                std::thread::sleep(READ_POLL);
            }
        }
        sessions.retain(|h| !h.is_finished());
    }
    for h in sessions {
        let _ = h.join();
    }
}

fn handshake(stream: TcpStream) -> Result<WebSocket<TcpStream>> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))?;
    Ok(ws)
}

fn reject(stream: TcpStream) {
    if let Ok(mut ws) = handshake(stream) {
        let msg = ServerMessage::Error {
            message: "another client is already connected".into(),
            seq: None,
        };
        let _ = ws.send(Message::text(encode(&msg)));
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

fn session(
    stream: TcpStream,
    outgoing: &ArrayQueue<String>,
    incoming: &ArrayQueue<ClientMessage>,
    stop: &AtomicBool,
) -> Result<()> {
    let mut ws = handshake(stream)?;
    ws.get_ref().set_read_timeout(Some(READ_POLL))?;
    while !stop.load(Ordering::SeqCst) {
        while let Some(text) = outgoing.pop() {
            ws.write(Message::text(text))?;
        }
        ws.flush()?;
        match ws.read() {
            Ok(Message::Text(text)) => match decode_client(text.as_str()) {
                Ok(msg) => {
                    let seq = msg.seq();
                    if incoming.push(msg).is_err() {
                        let reply = ServerMessage::Error {
                            message: "command queue full".into(),
                            seq: Some(seq),
                        };
                        ws.send(Message::text(encode(&reply)))?;
                    }
                }
                Err(message) => ws.send(Message::text(encode(&ServerMessage::Error { message, seq: None })))?,
            },
            Ok(Message::Binary(_)) => {
                let reply = ServerMessage::Error {
                    message: "binary frames are not supported".into(),
                    seq: None,
                };
                ws.send(Message::text(encode(&reply)))?;
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Handover world whose object is moved only by client commands.
pub struct LiveSim {
    cfg: ExperimentConfig,
    backend: Backend,
    scene: Scene,
    tracker: Tracker,
    tool: Pose,
    flow: SyntheticFlowProvider,
    frame: u64,
    trial: u64,
    running: bool,
    track_start: Option<f64>,
    outcome: Option<Outcome>,
    adjudication: Option<Adjudication>,
    close_time: Option<f64>,
    last_seq: Option<u64>,
    pending: Option<ExperimentConfig>,
}

impl LiveSim {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let backend = Backend::from_config(cfg)?;
        let tool = tool_pose(&cfg.handover.tool);
        let tracker = Tracker::new_handover(cfg.tracker, &tool, derive_seed(derive_seed(cfg.seed, BRIDGE_STREAM), 0))?;
        Ok(Self {
            scene: handover_scene(cfg, Vector3::zeros()),
            cfg: cfg.clone(),
            backend,
            tracker,
            tool,
            flow: SyntheticFlowProvider::new(),
            frame: 0,
            trial: 0,
            running: true,
            track_start: None,
            outcome: None,
            adjudication: None,
            close_time: None,
            last_seq: None,
            pending: None,
        })
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_running(&self) -> bool {
        self.running && self.outcome.is_none()
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Starts a fresh trial: new scene, tracker and frame counter.
    pub fn reset(&mut self) -> Result<()> {
        if let Some(cfg) = self.pending.take() {
            self.backend = Backend::from_config(&cfg)?;
            self.cfg = cfg;
        }
        self.trial += 1;
        self.frame = 0;
        self.tool = tool_pose(&self.cfg.handover.tool);
        self.scene = handover_scene(&self.cfg, Vector3::zeros());
        let seed = derive_seed(derive_seed(self.cfg.seed, BRIDGE_STREAM), self.trial);
        self.tracker = Tracker::new_handover(self.cfg.tracker, &self.tool, seed)?;
        self.flow = SyntheticFlowProvider::new();
        self.track_start = None;
        self.outcome = None;
        self.adjudication = None;
        self.close_time = None;
        self.running = true;
        Ok(())
    }

    /// Applies one client message; the error text goes back to the client.
    pub fn apply(&mut self, msg: ClientMessage) -> std::result::Result<(), String> {
        let seq = msg.seq();
        if self.last_seq.is_some_and(|last| seq <= last) {
            return Err(format!("sequence number {seq} is not after {}", self.last_seq.unwrap()));
        }
        self.last_seq = Some(seq);
        match msg {
            ClientMessage::Command { object, pose, .. } => {
                let o = self.scene.object_mut(object).ok_or_else(|| format!("no object with id {object}"))?;
                o.pose = pose;
            }
            ClientMessage::Control { action, .. } => match action {
                ControlAction::Start => self.running = true,
                ControlAction::Pause => self.running = false,
                ControlAction::Reset => self.reset().map_err(|e| e.to_string())?,
                ControlAction::ConfigPatch(patch) => {
                    let base = self.pending.as_ref().unwrap_or(&self.cfg);
                    let mut value = serde_json::to_value(base).map_err(|e| e.to_string())?;
                    merge_patch(&mut value, &patch);
                    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| format!("bad config patch: {e}"))?;
                    cfg.validate().map_err(|e| format!("bad config patch: {e}"))?;
                    self.pending = Some(cfg);
                }
            },
        }
        Ok(())
    }

    /// Advances one frame unless paused or finished.
    pub fn step(&mut self) -> Result<Option<Snapshot>> {
        if !self.is_running() {
            return Ok(None);
        }
        let dt = self.cfg.tracker.loop_dt;
        let t = self.frame as f64 * dt;
        let render = render_depth(&self.scene, &self.cfg.camera.pose_in_world(&self.tool), &self.cfg.camera, t);
        self.flow.record(t, &self.scene);
        self.backend.sync(&self.scene);
        let provider: Option<&mut dyn FlowProvider> = if self.cfg.tracker.use_flow { Some(&mut self.flow) } else { None };
        let out = self.tracker.step(&render.frame, &self.tool, self.backend.evaluator(), provider, true);
        if self.track_start.is_none() && self.tracker.phase() == Phase::Track {
            self.track_start = Some(t);
        }
        self.tool = if out.open_loop {
            out.target
        } else {
            servo_step(&self.tool, &out.target, &self.cfg.tracker.servo, dt)
        };
        let t_next = t + dt;
        let h = &self.cfg.handover;
        if self.tracker.phase() == Phase::Closed {
            let a = adjudicate_with(&self.scene, &self.tool, &self.cfg.tracker.gripper, &self.cfg.oracle);
            self.outcome = Some(if a.success { Outcome::Success } else { Outcome::Failure });
            self.adjudication = Some(a);
            self.close_time = Some(t_next);
        } else {
            let expired = match self.track_start {
                Some(s) => t_next >= s + h.track_timeout - 1e-9,
                None => t_next >= h.init_timeout - 1e-9,
            };
            if expired {
                self.outcome = Some(match self.tracker.phase() {
                    Phase::Lost | Phase::HandoverInit => Outcome::Lost,
                    _ => Outcome::Timeout,
                });
            }
        }
        let snap = Snapshot {
            frame: self.frame,
            trial: self.trial,
            t,
            objects: self
                .scene
                .objects
                .iter()
                .map(|o| ObjectState { id: o.id, pose: o.pose })
                .collect(),
            telemetry: out.telemetry,
            last_seq: self.last_seq,
            outcome: self.outcome,
        };
        self.frame += 1;
        Ok(Some(snap))
    }
}

/// RFC 7396 merge patch.
fn merge_patch(target: &mut serde_json::Value, patch: &serde_json::Value) {
    match (target, patch) {
        (serde_json::Value::Object(t), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_patch(t.entry(k.clone()).or_insert(serde_json::Value::Null), v);
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

/// Drains client messages into the sim, replying to bad ones.
pub fn pump(server: &BridgeServer, sim: &mut LiveSim) {
    for msg in server.drain() {
        let seq = msg.seq();
        if let Err(message) = sim.apply(msg) {
            server.publish(&ServerMessage::Error { message, seq: Some(seq) });
        }
    }
}

/// Runs the live loop at the tracker rate until `stop` returns true.
pub fn serve_bridge(server: &BridgeServer, sim: &mut LiveSim, stop: &dyn Fn(&LiveSim) -> bool) -> Result<()> {
    let dt = Duration::from_secs_f64(sim.config().tracker.loop_dt);
    let mut next = Instant::now();
    let mut idle = 0u64;
    loop {
        if stop(sim) {
            return Ok(());
        }
        pump(server, sim);
        match sim.step()? {
            Some(snap) => {
                server.publish(&ServerMessage::Snapshot(snap));
            }
            None => {
                idle += 1;
                if idle % 20 == 1 {
                    server.publish(&ServerMessage::Heartbeat {
                        frame: sim.frame(),
                        trial: sim.trial(),
                    });
                }
            }
        }
        next += dt;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

/// One bridge-driven handover trial: waits for a client (sending heartbeats),
/// then runs in real time until the trial ends.
pub fn run_bridge_trial(server: &BridgeServer, sim: &mut LiveSim, connect_timeout: Option<Duration>) -> Result<EpisodeResult> {
    let dt = Duration::from_secs_f64(sim.config().tracker.loop_dt);
    let waiting = Instant::now();
    while !server.is_connected() {
        if connect_timeout.is_some_and(|t| waiting.elapsed() > t) {
            bail!("no bridge client connected");
        }
        server.publish(&ServerMessage::Heartbeat {
            frame: sim.frame(),
            trial: sim.trial(),
        });
        std::thread::sleep(dt.max(Duration::from_millis(200)));
    }
    let mut frames = Vec::new();
    let mut timing = Vec::new();
    let mut next = Instant::now();
    loop {
        pump(server, sim);
        if let Some(mut snap) = sim.step()? {
            server.publish(&ServerMessage::Snapshot(snap.clone()));
            timing.push(snap.telemetry.timing.take().unwrap_or_default());
            frames.push(snap.telemetry);
        }
        if let Some(outcome) = sim.outcome() {
            return Ok(EpisodeResult {
                outcome,
                adjudication: sim.adjudication,
                frames,
                timing,
                track_start: sim.track_start,
                close_time: sim.close_time,
                final_tool: sim.tool,
            });
        }
        next += dt;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

/// Handover trials where a bridge client moves the object.
pub fn run_handover_bridge(cfg: &ExperimentConfig, ov: ArmOverride, server: &BridgeServer, connect_timeout: Option<Duration>) -> Result<RunOutput> {
    let mut cfg = cfg.clone();
    cfg.tracker.adaptive = ov.adaptive.unwrap_or(cfg.tracker.adaptive);
    cfg.tracker.use_flow = ov.flow.unwrap_or(cfg.tracker.use_flow);
    let trials = ov.trials.unwrap_or(cfg.handover.trials);
    let mut sim = LiveSim::new(&cfg)?;
    let mut out = RunOutput::default();
    let (mut wins, mut lost) = (0, 0);
    for trial in 0..trials {
        if trial > 0 {
            sim.reset()?;
        }
        let result = run_bridge_trial(server, &mut sim, connect_timeout)?;
        info!("bridge trial {trial}: {}", result.outcome.as_str());
        wins += (result.outcome == Outcome::Success) as usize;
        lost += (result.outcome == Outcome::Lost) as usize;
        out.push_trial(
            TrialRecord {
                scenario: "handover_bridge".into(),
                trial,
                rng_seed: derive_seed(derive_seed(cfg.seed, BRIDGE_STREAM), sim.trial()),
                adaptive: cfg.tracker.adaptive,
                flow: cfg.tracker.use_flow,
                outcome: result.outcome,
                baseline_success: None,
                frames: 0,
                close_time: None,
                telemetry: String::new(),
            },
            result,
        );
    }
    let arm = arm_name(cfg.tracker.adaptive, cfg.tracker.use_flow);
    let mut row = SummaryRow::new("handover", "handover_bridge", &arm, wins, lost, trials);
    row.adaptive = cfg.tracker.adaptive;
    row.flow = cfg.tracker.use_flow;
    out.summary.push(row);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_round_trip_with_version() {
        let cmd = ClientMessage::Command {
            seq: 3,
            object: 1,
            pose: Pose::translate(0.1, 0.0, 0.2),
        };
        let text = encode(&cmd);
        assert!(text.contains("\"v\":1") && text.contains("\"type\":\"command\""), "{text}");
        assert_eq!(decode_client(&text).unwrap().seq(), 3);
        let ctl = r#"{"v":1,"type":"control","seq":4,"action":"reset"}"#;
        assert_eq!(
            decode_client(ctl).unwrap(),
            ClientMessage::Control {
                seq: 4,
                action: ControlAction::Reset
            }
        );
        let patch = r#"{"v":1,"type":"control","seq":5,"action":{"config_patch":{"tracker":{"adaptive":false}}}}"#;
        assert!(matches!(decode_client(patch).unwrap(), ClientMessage::Control { action: ControlAction::ConfigPatch(_), .. }));
        let hb = encode(&ServerMessage::Heartbeat { frame: 2, trial: 0 });
        assert_eq!(decode_server(&hb).unwrap(), ServerMessage::Heartbeat { frame: 2, trial: 0 });
    }

    #[test]
    fn bad_messages_are_explained() {
        assert!(decode_client("nope").unwrap_err().contains("invalid JSON"));
        assert!(decode_client(r#"{"type":"control","seq":1,"action":"start"}"#).unwrap_err().contains("`v`"));
        assert!(decode_client(r#"{"v":9,"type":"control","seq":1,"action":"start"}"#).unwrap_err().contains("version 9"));
        assert!(decode_client(r#"{"v":1,"type":"teleport"}"#).unwrap_err().contains("invalid message"));
    }

    #[test]
    fn merge_patch_replaces_and_removes() {
        let mut a = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge_patch(&mut a, &serde_json::json!({"a": {"b": 5, "c": null}, "e": [1]}));
        assert_eq!(a, serde_json::json!({"a": {"b": 5}, "d": 3, "e": [1]}));
    }

    #[test]
    fn live_sim_applies_commands_and_resets() {
        let cfg = ExperimentConfig::default();
        let mut sim = LiveSim::new(&cfg).unwrap();
        let first = sim.step().unwrap().unwrap();
        assert_eq!(first.frame, 0);
        let target = Pose::translate(0.01, 0.0, 0.0) * first.objects[0].pose;
        sim.apply(ClientMessage::Command { seq: 1, object: 1, pose: target }).unwrap();
        let next = sim.step().unwrap().unwrap();
        assert_eq!(next.frame, 1);
        assert_eq!(next.last_seq, Some(1));
        let dx = next.objects[0].pose.translation() - first.objects[0].pose.translation();
        assert!((dx - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-12);
        assert!(sim.apply(ClientMessage::Command { seq: 2, object: 9, pose: target }).unwrap_err().contains("no object"));
        assert!(sim.apply(ClientMessage::Command { seq: 2, object: 1, pose: target }).unwrap_err().contains("sequence"));
        sim.apply(ClientMessage::Control { seq: 3, action: ControlAction::Pause }).unwrap();
        assert!(sim.step().unwrap().is_none());
        sim.apply(ClientMessage::Control { seq: 4, action: ControlAction::Reset }).unwrap();
        let fresh = sim.step().unwrap().unwrap();
        assert_eq!((fresh.frame, fresh.telemetry.step, fresh.trial), (0, 0, 1));
    }

    #[test]
    fn config_patch_takes_effect_on_reset() {
        let mut sim = LiveSim::new(&ExperimentConfig::default()).unwrap();
        let patch = serde_json::json!({"tracker": {"adaptive": false}});
        sim.apply(ClientMessage::Control { seq: 1, action: ControlAction::ConfigPatch(patch) }).unwrap();
        assert!(sim.config().tracker.adaptive);
        sim.apply(ClientMessage::Control { seq: 2, action: ControlAction::Reset }).unwrap();
        assert!(!sim.config().tracker.adaptive);
        let bad = serde_json::json!({"tracker": {"loop_dt": 0.0}});
        assert!(sim.apply(ClientMessage::Control { seq: 3, action: ControlAction::ConfigPatch(bad) }).is_err());
    }
}
