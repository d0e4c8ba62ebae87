//! The live gateway, driven over a real WebSocket.

use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use swarmsim::engine::{gateway_serve, parse_request, replay_frames, replay_serve, EventLog, Request, ServeOptions, SimConfig, Simulation};
use swarmsim::scenario::{parse_scenario, ScenarioSpec};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn demo(duration: f64) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/demo10.scn");
    let mut spec = parse_scenario(&std::fs::read_to_string(path).unwrap()).unwrap();
    spec.duration_limit = duration;
    spec
}

fn serve(spec: ScenarioSpec, speed: f64) -> swarmsim::engine::ServeHandle {
    let sim = Simulation::new(SimConfig::new(spec).with_seed(42)).unwrap();
    gateway_serve(sim, ServeOptions { port: 0, speed, start_paused: true, telemetry_rate: None }).unwrap()
}

struct Client(WebSocket<MaybeTlsStream<TcpStream>>);

impl Client {
    fn open(addr: SocketAddr) -> Self {
        Client(tungstenite::connect(format!("ws://{addr}")).unwrap().0)
    }

    /// Opens and consumes the hello frame.
    fn connect(addr: SocketAddr) -> Self {
        let mut c = Self::open(addr);
        assert_eq!(c.next()["type"], "hello");
        c
    }

    fn next(&mut self) -> Value {
        loop {
            match self.0.read().unwrap() {
                Message::Text(t) => return serde_json::from_str(&t).unwrap(),
                Message::Close(_) => panic!("closed"),
                _ => {}
            }
        }
    }

    /// Next frame of the given type, skipping others.
    fn next_of(&mut self, kind: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        while Instant::now() < deadline {
            let v = self.next();
            if v["type"] == kind {
                return v;
            }
        }
        panic!("no {kind} frame");
    }

    fn send(&mut self, v: Value) {
        self.0.send(Message::Text(v.to_string())).unwrap();
    }

    fn send_raw(&mut self, s: &str) {
        self.0.send(Message::Text(s.to_owned())).unwrap();
    }
}

fn drone_state<'a>(frame: &'a Value, id: &str) -> Vec<&'a str> {
    let d = frame["drones"].as_array().unwrap().iter().find(|d| d["id"] == id).unwrap();
    d["state"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect()
}

#[test]
fn hello_lists_the_swarms() {
    let h = serve(demo(10.0), 0.0);
    let v = Client::open(h.addr).next();
    assert_eq!((v["type"].as_str(), v["mode"].as_str()), (Some("hello"), Some("live")));
    assert_eq!(v["swarms"]["swarm-2"], json!(["d4", "d5", "d6", "d7"]));
    h.shutdown().unwrap();
}

#[test]
fn land_sends_swarm_one_home_on_delivery() {
    let h = serve(demo(60.0), 0.0);
    let mut c = Client::connect(h.addr);
    c.send(json!({"type": "cmd", "name": "LAND", "target": "swarm-1", "at": 30, "id": "x"}));
    let ack = c.next_of("ack");
    assert_eq!((ack["name"].as_str(), ack["at"].as_f64(), ack["id"].as_str()), (Some("LAND"), Some(30.0), Some("x")));
    c.send(json!({"type": "cmd", "name": "Resume"}));
    let mut home_at = None;
    loop {
        let f = c.next();
        if f["type"] == "end" {
            break;
        }
        if f["type"] != "telemetry" || home_at.is_some() {
            continue;
        }
        let t = f["t"].as_f64().unwrap();
        let all_rtb = ["d1", "d2", "d3"].iter().all(|d| drone_state(&f, d).contains(&"ReturningToBase"));
        if t < 30.0 {
            assert!(!all_rtb, "returning before the command, t={t}");
        } else if all_rtb {
            home_at = Some(t);
        }
    }
    let shown = home_at.expect("swarm-1 never turned for home");
    let (log, _) = h.wait().unwrap().unwrap();
    // Each drone turns on the tick after the LAND reaches it.
    let mut turned = 0.0f64;
    for d in ["d1", "d2", "d3"] {
        let got = log.records.iter().find(|r| r.subject == d && r.kind.name() == "MessageDelivered" && r.field("cmd") == Some("LAND"));
        let got = got.unwrap_or_else(|| panic!("{d} never received LAND"));
        assert_eq!(got.field("from"), Some("gcs"));
        let rtb = log.records.iter().find(|r| r.subject == d && r.time >= 30.0 && r.field("to") == Some("ReturningToBase")).unwrap();
        assert!((rtb.time - got.time - 0.05).abs() < 1e-9, "{d}: delivered {} turned {}", got.time, rtb.time);
        turned = turned.max(rtb.time);
    }
    assert!(turned <= 30.0 + 0.15 + 1e-9, "turned at {turned}");
    // ...and the next telemetry frame shows it.
    assert!(shown >= turned && shown < turned + 0.1, "shown at {shown}, turned at {turned}");
}

#[test]
fn pause_freezes_time_and_bad_frames_change_nothing() {
    let h = serve(demo(60.0), 0.0);
    let mut c = Client::connect(h.addr);
    let first = c.next_of("telemetry");
    assert_eq!(first["paused"], true);
    for _ in 0..3 {
        let f = c.next_of("telemetry");
        assert_eq!((f["t"].as_f64(), &f["hash"]), (Some(0.0), &first["hash"]));
    }

    for bad in [
        "{not json",
        r#"{"type":"cmd","name":"LAND","target":"swarm-9","id":7}"#,
        r#"{"type":"cmd","name":"GOTO","target":"d1","point":[1,2]}"#,
        r#"{"type":"cmd","name":"Dance"}"#,
        r#"{"type":"telemetry"}"#,
    ] {
        c.send_raw(bad);
        let e = c.next_of("err");
        assert!(e["reason"].as_str().is_some_and(|r| !r.is_empty()), "{bad}: {e}");
        let f = c.next_of("telemetry");
        assert_eq!((f["t"].as_f64(), &f["hash"]), (Some(0.0), &first["hash"]), "{bad}");
    }
    let e = {
        c.send_raw(r#"{"type":"cmd","name":"LAND","target":"swarm-9","id":7}"#);
        c.next_of("err")
    };
    assert_eq!(e["id"], 7);

    c.send(json!({"type": "cmd", "name": "Resume"}));
    assert_eq!(c.next_of("ack")["name"], "Resume");
    let moving = loop {
        let f = c.next_of("telemetry");
        // Past the first periodic snapshot, so the log has grown.
        if f["paused"] == false && f["t"].as_f64().unwrap() > 1.0 {
            break f;
        }
    };
    assert!(moving["t"].as_f64().unwrap() > 0.0);
    assert_ne!(moving["hash"], first["hash"]);
    h.shutdown().unwrap();
}

#[test]
fn paused_mid_run_frames_repeat_the_same_time() {
    let h = serve(demo(600.0), 20.0);
    let mut c = Client::connect(h.addr);
    c.send(json!({"type": "cmd", "name": "Resume"}));
    c.next_of("ack");
    while c.next_of("telemetry")["t"].as_f64().unwrap() < 1.0 {}
    c.send(json!({"type": "cmd", "name": "Pause"}));
    let at = c.next_of("ack")["at"].as_f64().unwrap();
    let mut seen = Vec::new();
    while seen.len() < 3 {
        let f = c.next_of("telemetry");
        if f["paused"] == true {
            seen.push((f["t"].as_f64().unwrap(), f["hash"].clone()));
        }
    }
    assert!(seen.iter().all(|s| *s == seen[0]), "{seen:?}");
    assert!((seen[0].0 - at).abs() < 1e-9);

    c.send(json!({"type": "cmd", "name": "SetSpeed", "factor": 0}));
    assert_eq!(c.next_of("ack")["name"], "SetSpeed");
    h.shutdown().unwrap();
}

#[test]
fn live_frames_agree_with_the_replay_of_their_log() {
    let h = serve(demo(40.0), 0.0);
    let mut c = Client::connect(h.addr);
    c.send(json!({"type": "cmd", "name": "Resume"}));
    let mut live = Vec::new();
    loop {
        let f = c.next();
        match f["type"].as_str() {
            Some("end") => break,
            Some("telemetry") if f["paused"] == false => live.push(f),
            _ => {}
        }
    }
    let (log, _) = h.wait().unwrap().unwrap();
    let replayed = replay_frames(&EventLog::parse(&log.to_text()).unwrap()).unwrap();
    let mut matched = 0;
    for r in &replayed {
        let Some(l) = live.iter().find(|l| (l["t"].as_f64().unwrap() - r.t).abs() < 1e-9) else { continue };
        assert_eq!(l["hash"].as_str(), Some(r.hash.as_str()), "t={}", r.t);
        for d in &r.drones {
            assert_eq!(drone_state(l, &d.id), d.state.iter().map(String::as_str).collect::<Vec<_>>(), "t={} {}", r.t, d.id);
        }
        matched += 1;
    }
    assert!(matched + 1 >= replayed.len(), "only {matched} of {} frames lined up", replayed.len());
}

#[test]
fn replay_serving_is_read_only() {
    let mut sim = Simulation::new(SimConfig::new(demo(5.0))).unwrap();
    sim.run_to_end().unwrap();
    let h = replay_serve(&sim.event_log(), ServeOptions { port: 0, speed: 0.0, start_paused: true, telemetry_rate: None }).unwrap();
    let mut c = Client::open(h.addr);
    assert_eq!(c.next()["mode"], "replay");
    c.send(json!({"type": "cmd", "name": "LAND", "target": "swarm-1", "id": 3}));
    let e = c.next_of("err");
    assert_eq!((e["reason"].as_str(), &e["id"]), (Some("replay is read-only"), &json!(3)));
    c.send(json!({"type": "cmd", "name": "Resume", "id": 4}));
    assert_eq!(c.next_of("ack")["id"], 4);
    let mut frames = 0;
    while c.next()["type"] != "end" {
        frames += 1;
    }
    assert!(frames >= 50);
    h.shutdown().unwrap();
}

#[test]
fn request_parsing() {
    let spec = demo(60.0);
    let p = |s: &str| parse_request(s, &spec);
    assert!(matches!(p(r#"{"type":"cmd","name":"ARM","target":"d9"}"#), Ok(Request::Operator(_))));
    assert!(matches!(p(r#"{"type":"cmd","name":"RTB","target":"team"}"#), Ok(Request::Operator(_))));
    assert!(matches!(p(r#"{"type":"cmd","name":"GOTO","target":"d1","point":[1,2,3]}"#), Ok(Request::Operator(_))));
    assert!(matches!(p(r#"{"type":"cmd","name":"MissionEnd"}"#), Ok(Request::Operator(_))));
    assert_eq!(p(r#"{"type":"cmd","name":"SetSpeed","factor":2.5}"#), Ok(Request::SetSpeed(2.5)));
    assert!(p(r#"{"type":"cmd","name":"SetSpeed","factor":-1}"#).is_err());
    assert!(p(r#"{"type":"cmd","name":"GOTO","target":"swarm-1","point":[1,2,3]}"#).is_err());
    assert!(p(r#"{"type":"cmd","name":"LAND","target":"d1","at":-4}"#).is_err());
}
