//! Live gateway: telemetry out, operator commands in, over WebSocket.
//!
//! The simulation runs on its own thread and talks to the socket side only
//! through two channels: requests in (drained at tick boundaries) and
//! immutable serialized frames out.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use crate::geometry::Vec3;
use crate::scenario::{resolve_target, CommandTarget, OperatorCommand, ScenarioSpec};

use super::telemetry::{replay_frames, TelemetryFrame};
use super::{EngineError, EventKind, EventLog, LiveCommand, MissionReport, Simulation, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    /// 0 picks a free port.
    pub port: u16,
    /// Sim seconds per wall second; 0 runs unpaced.
    pub speed: f64,
    pub start_paused: bool,
    /// Frames per sim second; defaults to the scenario's telemetry rate.
    pub telemetry_rate: Option<f64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { port: 0, speed: 1.0, start_paused: false, telemetry_rate: None }
    }
}

/// A request from a client, validated on the sim thread.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Operator(LiveCommand),
    Pause,
    Resume,
    SetSpeed(f64),
}

fn err_frame(reason: &str, id: Option<&Value>) -> String {
    json!({"v": PROTOCOL_VERSION, "type": "err", "reason": reason, "id": id}).to_string()
}

/// Parses a `cmd` frame against the scenario.
pub fn parse_request(text: &str, spec: &ScenarioSpec) -> Result<Request, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("malformed frame: {e}"))?;
    if v.get("type").and_then(Value::as_str) != Some("cmd") {
        return Err("expected a frame of type `cmd`".into());
    }
    let name = v.get("name").and_then(Value::as_str).ok_or("missing command name")?;
    let at = match v.get("at") {
        None | Some(Value::Null) => None,
        Some(a) => Some(a.as_f64().filter(|t| *t >= 0.0).ok_or("`at` must be a non-negative number")?),
    };
    let target = || -> Result<CommandTarget, String> {
        let raw = v.get("target").and_then(Value::as_str).ok_or("missing target")?;
        resolve_target(spec, raw).ok_or_else(|| format!("unknown target `{raw}`"))
    };
    let op = |command| Ok(Request::Operator(LiveCommand { at, command }));
    match name {
        "ARM" => op(OperatorCommand::Arm(target()?)),
        "LAND" => op(OperatorCommand::Land(target()?)),
        "RTB" => op(OperatorCommand::Rtb(target()?)),
        "GOTO" => {
            let CommandTarget::Drone(d) = target()? else { return Err("GOTO needs a drone target".into()) };
            let p = v.get("point").and_then(Value::as_array).ok_or("GOTO needs `point`: [x, y, z]")?;
            let c: Vec<f64> = p.iter().filter_map(Value::as_f64).collect();
            if c.len() != 3 || p.len() != 3 {
                return Err("`point` must be three numbers".into());
            }
            op(OperatorCommand::Goto(d, Vec3::new(c[0], c[1], c[2])))
        }
        "MissionEnd" => op(OperatorCommand::MissionEnd),
        "Pause" => Ok(Request::Pause),
        "Resume" => Ok(Request::Resume),
        "SetSpeed" => {
            let f = v.get("factor").and_then(Value::as_f64).filter(|f| *f >= 0.0 && f.is_finite());
            Ok(Request::SetSpeed(f.ok_or("SetSpeed needs a non-negative `factor`")?))
        }
        other => Err(format!("unknown command `{other}`")),
    }
}

type Inbound = (String, Sender<String>);

/// Running gateway.
pub struct ServeHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<Result<Option<(EventLog, MissionReport)>, EngineError>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServeHandle {
    /// Blocks until the run ends; returns its log and report (none for a
    /// replay).
    pub fn wait(mut self) -> Result<Option<(EventLog, MissionReport)>, EngineError> {
        let res = self.sim.take().expect("joined once").join().expect("sim thread panicked");
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        res
    }

    /// Stops serving; an unfinished run is abandoned.
    pub fn shutdown(self) -> Result<Option<(EventLog, MissionReport)>, EngineError> {
        self.stop.store(true, Ordering::SeqCst);
        self.wait()
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

type Clients = Arc<Mutex<Vec<Sender<Arc<String>>>>>;

fn broadcast(clients: &Clients, frame: String) {
    let frame = Arc::new(frame);
    clients.lock().expect("client list").retain(|c| c.send(frame.clone()).is_ok());
}

fn client_loop(mut ws: WebSocket<TcpStream>, hello: String, frames: Receiver<Arc<String>>, requests: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let (reply_tx, reply_rx) = unbounded::<String>();
    if ws.send(Message::Text(hello)).is_err() {
        return;
    }
    while !stop.load(Ordering::SeqCst) {
        let mut out: Vec<String> = reply_rx.try_iter().collect();
        out.extend(frames.try_iter().map(|f| (*f).clone()));
        for f in out {
            if ws.send(Message::Text(f)).is_err() {
                return;
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if requests.send((text, reply_tx.clone())).is_err() {
                    let _ = ws.send(Message::Text(err_frame("run has ended", None)));
                }
            }
            Ok(Message::Close(_)) => return,
            Ok(Message::Binary(_)) => {
                let _ = ws.send(Message::Text(err_frame("binary frames are not supported", None)));
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn spawn_acceptor(listener: TcpListener, hello: String, clients: Clients, requests: Sender<Inbound>, stop: Arc<AtomicBool>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        listener.set_nonblocking(true).expect("nonblocking listener");
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let Ok(ws) = tungstenite::accept(stream) else { continue };
                    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(10)));
                    let (tx, rx) = unbounded();
                    clients.lock().expect("client list").push(tx);
                    let (hello, requests, stop) = (hello.clone(), requests.clone(), stop.clone());
                    std::thread::spawn(move || client_loop(ws, hello, rx, requests, stop));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                Err(_) => std::thread::sleep(Duration::from_millis(5)),
            }
        }
    })
}

fn hello_frame(spec: &ScenarioSpec, mode: &str) -> String {
    let swarms: serde_json::Map<String, Value> = spec
        .swarms
        .iter()
        .map(|s| (s.id.to_string(), json!(s.drone_ids.iter().map(|d| d.to_string()).collect::<Vec<_>>())))
        .collect();
    json!({"v": PROTOCOL_VERSION, "type": "hello", "mode": mode, "swarms": swarms, "duration_limit": spec.duration_limit}).to_string()
}

/// Wall-clock pacing against sim time.
struct Pacer {
    speed: f64,
    origin: Instant,
    sim_origin: f64,
}

impl Pacer {
    fn new(speed: f64, sim_t: f64) -> Self {
        Self { speed, origin: Instant::now(), sim_origin: sim_t }
    }

    fn rebase(&mut self, sim_t: f64) {
        self.origin = Instant::now();
        self.sim_origin = sim_t;
    }

    fn wait_until(&self, sim_t: f64) {
        if self.speed > 0.0 {
            let due = self.origin + Duration::from_secs_f64(((sim_t - self.sim_origin) / self.speed).max(0.0));
            if let Some(d) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(d);
            }
        }
    }
}

/// Serves a live run; the run starts immediately unless `start_paused`.
pub fn gateway_serve(mut sim: Simulation, opts: ServeOptions) -> Result<ServeHandle, EngineError> {
    let listener = TcpListener::bind(("127.0.0.1", opts.port))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let clients: Clients = Arc::default();
    let (req_tx, req_rx) = unbounded::<Inbound>();
    let hello = hello_frame(sim.scenario(), "live");
    let acceptor = spawn_acceptor(listener, hello, clients.clone(), req_tx, stop.clone());

    let rate = opts.telemetry_rate.unwrap_or_else(|| sim.scenario().mission.telemetry_rate());
    let dt = sim.scenario().timestep;
    let every = ((1.0 / (rate * dt)).round() as u64).max(1);
    sim.set_paused(opts.start_paused);
    let stop_sim = stop.clone();
    let sim_thread = std::thread::spawn(move || -> Result<Option<(EventLog, MissionReport)>, EngineError> {
        let mut pacer = Pacer::new(opts.speed, sim.time());
        let mut sent = 0usize;
        let mut tick: u64 = 0;
        let emit = |sim: &Simulation, sent: &mut usize| {
            let events: Vec<String> =
                sim.records()[*sent..].iter().filter(|r| r.kind != EventKind::Snapshot).map(|r| r.to_string()).collect();
            *sent = sim.records().len();
            broadcast(&clients, sim.telemetry_frame(events).to_json());
        };
        emit(&sim, &mut sent);
        let mut last_paused_frame = Instant::now();
        while !sim.is_finished() && !stop_sim.load(Ordering::SeqCst) {
            for (text, reply) in req_rx.try_iter() {
                let resp = match parse_request(&text, sim.scenario()) {
                    Err(reason) => err_frame(&reason, serde_json::from_str::<Value>(&text).ok().as_ref().and_then(|v| v.get("id"))),
                    Ok(req) => {
                        let id = serde_json::from_str::<Value>(&text).ok().and_then(|v| v.get("id").cloned());
                        let name = serde_json::from_str::<Value>(&text).ok().and_then(|v| v.get("name").cloned());
                        let ack = |at: f64| json!({"v": PROTOCOL_VERSION, "type": "ack", "name": name, "at": at, "id": id}).to_string();
                        match req {
                            Request::Pause => {
                                sim.set_paused(true);
                                ack(sim.time())
                            }
                            Request::Resume => {
                                sim.set_paused(false);
                                pacer.rebase(sim.time());
                                ack(sim.time())
                            }
                            Request::SetSpeed(f) => {
                                pacer.speed = f;
                                pacer.rebase(sim.time());
                                ack(sim.time())
                            }
                            Request::Operator(cmd) => match sim.inject(cmd) {
                                Ok(at) => ack(at),
                                Err(e) => err_frame(&e.to_string(), id.as_ref()),
                            },
                        }
                    }
                };
                let _ = reply.send(resp);
            }
            if sim.paused() {
                // Keep clients fed with the frozen state.
                if last_paused_frame.elapsed() >= Duration::from_secs_f64(1.0 / rate) {
                    emit(&sim, &mut sent);
                    last_paused_frame = Instant::now();
                }
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            sim.step()?;
            tick += 1;
            if tick % every == 0 || sim.is_finished() {
                emit(&sim, &mut sent);
            }
            pacer.wait_until(sim.time());
        }
        let report = sim.report();
        broadcast(&clients, json!({"v": PROTOCOL_VERSION, "type": "end", "t": sim.time(), "outcome": report.outcome.name()}).to_string());
        // Give client threads a moment to flush the final frames.
        std::thread::sleep(Duration::from_millis(50));
        Ok(sim.is_finished().then(|| (sim.event_log(), report)))
    });
    Ok(ServeHandle { addr, stop, sim: Some(sim_thread), acceptor: Some(acceptor) })
}

/// Serves a replay of a complete log. Only Pause, Resume and SetSpeed are
/// accepted.
pub fn replay_serve(log: &EventLog, opts: ServeOptions) -> Result<ServeHandle, EngineError> {
    let frames = replay_frames(log)?;
    let spec = crate::scenario::parse_scenario(&log.scenario)?;
    let rate = opts.telemetry_rate.unwrap_or_else(|| spec.mission.telemetry_rate());
    let listener = TcpListener::bind(("127.0.0.1", opts.port))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let clients: Clients = Arc::default();
    let (req_tx, req_rx) = unbounded::<Inbound>();
    let acceptor = spawn_acceptor(listener, hello_frame(&spec, "replay"), clients.clone(), req_tx, stop.clone());
    let stop_sim = stop.clone();
    let sim_thread = std::thread::spawn(move || -> Result<Option<(EventLog, MissionReport)>, EngineError> {
        let mut paused = opts.start_paused;
        let mut pacer = Pacer::new(opts.speed, 0.0);
        let mut k = 0usize;
        let mut last_sent = Instant::now() - Duration::from_secs(1);
        while k < frames.len() && !stop_sim.load(Ordering::SeqCst) {
            for (text, reply) in req_rx.try_iter() {
                let t = k as f64 / rate;
                let id = serde_json::from_str::<Value>(&text).ok().and_then(|v| v.get("id").cloned());
                let ack = |name: &str| json!({"v": PROTOCOL_VERSION, "type": "ack", "name": name, "at": t, "id": id}).to_string();
                let resp = match parse_request(&text, &spec) {
                    Ok(Request::Pause) => {
                        paused = true;
                        ack("Pause")
                    }
                    Ok(Request::Resume) => {
                        paused = false;
                        pacer.rebase(t);
                        ack("Resume")
                    }
                    Ok(Request::SetSpeed(f)) => {
                        pacer.speed = f;
                        pacer.rebase(t);
                        ack("SetSpeed")
                    }
                    Ok(Request::Operator(_)) => err_frame("replay is read-only", id.as_ref()),
                    Err(reason) => err_frame(&reason, id.as_ref()),
                };
                let _ = reply.send(resp);
            }
            if paused {
                if last_sent.elapsed() >= Duration::from_secs_f64(1.0 / rate) {
                    let mut f: TelemetryFrame = frames[k.saturating_sub(1)].clone();
                    f.paused = true;
                    f.events.clear();
                    broadcast(&clients, f.to_json());
                    last_sent = Instant::now();
                }
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            pacer.wait_until(k as f64 / rate);
            broadcast(&clients, frames[k].to_json());
            last_sent = Instant::now();
            k += 1;
        }
        broadcast(&clients, json!({"v": PROTOCOL_VERSION, "type": "end", "t": log_duration(&frames)}).to_string());
        std::thread::sleep(Duration::from_millis(50));
        Ok(None)
    });
    Ok(ServeHandle { addr, stop, sim: Some(sim_thread), acceptor: Some(acceptor) })
}

fn log_duration(frames: &[TelemetryFrame]) -> f64 {
    frames.last().map_or(0.0, |f| f.t)
}
