//! Telemetry frames, from a live simulation or rebuilt from a log.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{wrap_angle, Vec3};
use crate::network::{connectivity, NetworkParams, Topology, GCS};
use crate::scenario::{parse_scenario, EntityKind};

use super::{parse_point, EngineError, EventKind, EventLog, LogError, Simulation};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityFrame {
    pub id: String,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub carried_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneFrame {
    pub id: String,
    pub swarm: String,
    /// Active operational states; empty while hovering.
    pub state: Vec<String>,
    /// Remaining flight time in seconds; absent in replays.
    pub endurance: Option<f64>,
    pub locked: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkFrame {
    pub a: String,
    pub b: String,
    pub up: bool,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    /// Digest of the event log up to `t`.
    pub hash: String,
    pub paused: bool,
    pub entities: Vec<EntityFrame>,
    pub drones: Vec<DroneFrame>,
    pub links: Vec<LinkFrame>,
    /// Log lines since the previous frame.
    pub events: Vec<String>,
}

impl TelemetryFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame is plain data")
    }
}

fn round(v: f64, digits: i32) -> f64 {
    let k = 10f64.powi(digits);
    (v * k).round() / k
}

fn links(topology: &Topology, params: &NetworkParams) -> Vec<LinkFrame> {
    connectivity(topology, params)
        .into_iter()
        .map(|l| LinkFrame { a: l.endpoints.0.to_string(), b: l.endpoints.1.to_string(), up: l.up, distance: round(l.distance, 2) })
        .collect()
}

pub(super) fn live_frame(sim: &Simulation, events: Vec<String>) -> TelemetryFrame {
    let world = sim.world();
    let entities = world
        .entities
        .iter()
        .map(|(id, e)| EntityFrame {
            id: id.to_string(),
            kind: e.kind.name().into(),
            x: round(e.pose.position.x, 2),
            y: round(e.pose.position.y, 2),
            z: round(e.pose.position.z, 2),
            yaw: round(e.pose.yaw, 3),
            carried_by: e.carried_by.as_ref().map(|c| c.to_string()),
        })
        .collect();
    let drones = sim
        .policies()
        .values()
        .map(|p| DroneFrame {
            id: p.id.to_string(),
            swarm: p.swarm().to_string(),
            state: p.op.names().into_iter().map(String::from).collect(),
            endurance: Some(round(p.endurance_remaining, 1)),
            locked: p.lock.locked_id.as_ref().map(|l| l.to_string()),
        })
        .collect();
    TelemetryFrame {
        v: PROTOCOL_VERSION,
        kind: "telemetry".into(),
        t: round(sim.time(), 2),
        hash: sim.state_hash(),
        paused: sim.paused(),
        entities,
        drones,
        links: links(&sim.topology(), &NetworkParams::from(&sim.scenario().network_params)),
        events,
    }
}

type Snapshot = (f64, BTreeMap<String, (Vec3, f64)>);

fn parse_snapshot(detail: &str) -> Option<BTreeMap<String, (Vec3, f64)>> {
    detail
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (id, rest) = item.split_once('=')?;
            let (xyz, yaw) = rest.rsplit_once(',')?;
            Some((id.to_owned(), (parse_point(xyz)?, yaw.parse().ok()?)))
        })
        .collect()
}

fn interpolate(snaps: &[Snapshot], t: f64) -> BTreeMap<String, (Vec3, f64)> {
    let i = snaps.partition_point(|(st, _)| *st <= t + 1e-9);
    match (i.checked_sub(1).map(|j| &snaps[j]), snaps.get(i)) {
        (Some((t0, a)), Some((t1, b))) => {
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            a.iter()
                .map(|(id, (pa, ya))| {
                    let (pb, yb) = b.get(id).copied().unwrap_or((*pa, *ya));
                    let p = *pa + (pb - *pa).scale(w);
                    (id.clone(), (p, wrap_angle(ya + wrap_angle(yb - ya) * w)))
                })
                .collect()
        }
        (Some((_, a)), None) => a.clone(),
        (None, Some((_, b))) => b.clone(),
        (None, None) => BTreeMap::new(),
    }
}

/// Rebuilds the telemetry stream of a complete run from its log alone:
/// `round(duration × telemetry_rate)` frames at the scenario's telemetry rate.
pub fn replay_frames(log: &EventLog) -> Result<Vec<TelemetryFrame>, EngineError> {
    if !log.is_complete() {
        return Err(LogError::Truncated.into());
    }
    let spec = parse_scenario(&log.scenario)?;
    let rate = spec.mission.telemetry_rate();
    let params = NetworkParams::from(&spec.network_params);
    let base = spec.base_station().map_or(Vec3::ZERO, |b| b.spawn_pose.position);
    let kinds: BTreeMap<String, EntityKind> = spec.entities.iter().map(|e| (e.id.to_string(), e.kind)).collect();
    let swarm_of: BTreeMap<String, String> =
        spec.swarms.iter().flat_map(|s| s.drone_ids.iter().map(move |d| (d.to_string(), s.id.to_string()))).collect();

    let snaps: Vec<Snapshot> = log
        .of_kind(EventKind::Snapshot)
        .map(|r| parse_snapshot(&r.detail).map(|s| (r.time, s)))
        .collect::<Option<_>>()
        .ok_or(LogError::Malformed(0))?;

    let n = (log.duration() * rate).round() as usize;
    let mut frames = Vec::with_capacity(n);
    let mut states: BTreeMap<String, Vec<String>> = swarm_of.keys().map(|d| (d.clone(), vec!["IdleSleeping".to_owned()])).collect();
    let mut locks: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut carried: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut hasher = Sha256::new();
    let mut next = 0;
    for k in 0..n {
        let t = k as f64 / rate;
        let mut events = Vec::new();
        while let Some(r) = log.records.get(next).filter(|r| r.time <= t + 1e-9) {
            let line = r.to_string();
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            match r.kind {
                EventKind::StateTransition => {
                    if let Some(to) = r.field("to") {
                        let names = if to == "Hover" { Vec::new() } else { to.split('+').map(String::from).collect() };
                        states.insert(r.subject.clone(), names);
                    }
                }
                EventKind::ObservationSummary => match r.field("lock") {
                    Some("acquired" | "swap") => {
                        locks.insert(r.subject.clone(), r.field("target").map(String::from));
                    }
                    Some("lost") => {
                        locks.insert(r.subject.clone(), None);
                    }
                    _ => {}
                },
                EventKind::ComplexBehavior => {
                    let (person, car) = (kinds.iter().find(|(_, k)| **k == EntityKind::Person), kinds.iter().find(|(_, k)| **k == EntityKind::Car));
                    if let (Some((p, _)), Some((c, _))) = (person, car) {
                        let boarded = r.field("kind") == Some("PersonEnteredCar");
                        carried.insert(p.clone(), boarded.then(|| c.clone()));
                    }
                }
                _ => {}
            }
            if r.kind != EventKind::Snapshot {
                events.push(line);
            }
            next += 1;
        }
        let poses = interpolate(&snaps, t);
        let mut topology: Topology = Topology::new();
        let entities = kinds
            .iter()
            .filter_map(|(id, kind)| {
                let (p, yaw) = match poses.get(id) {
                    Some(v) => *v,
                    None => {
                        let e = spec.entities.iter().find(|e| e.id.as_str() == id)?;
                        (e.spawn_pose.position, e.spawn_pose.yaw)
                    }
                };
                if *kind == EntityKind::Drone {
                    topology.insert(id.as_str().into(), p);
                }
                Some(EntityFrame {
                    id: id.clone(),
                    kind: kind.name().into(),
                    x: round(p.x, 2),
                    y: round(p.y, 2),
                    z: round(p.z, 2),
                    yaw: round(yaw, 3),
                    carried_by: carried.get(id).cloned().flatten(),
                })
            })
            .collect();
        topology.insert(GCS.into(), base + Vec3::new(0.0, 0.0, 2.0));
        let drones = swarm_of
            .iter()
            .map(|(id, swarm)| DroneFrame {
                id: id.clone(),
                swarm: swarm.clone(),
                state: states[id].clone(),
                endurance: None,
                locked: locks.get(id).cloned().flatten(),
            })
            .collect();
        frames.push(TelemetryFrame {
            v: PROTOCOL_VERSION,
            kind: "telemetry".into(),
            t: round(t, 2),
            hash: hex::encode(hasher.clone().finalize()),
            paused: false,
            entities,
            drones,
            links: links(&topology, &params),
            events,
        });
    }
    Ok(frames)
}

/// Streams a replay to `sink` at `speed` × real time (0 = as fast as
/// possible). Returns the number of frames sent; stops early if the sink
/// returns `false`.
pub fn replay(log: &EventLog, speed: f64, mut sink: impl FnMut(&str) -> bool) -> Result<usize, EngineError> {
    let frames = replay_frames(log)?;
    let rate = parse_scenario(&log.scenario)?.mission.telemetry_rate();
    let start = Instant::now();
    for (k, f) in frames.iter().enumerate() {
        if speed > 0.0 {
            let due = start + Duration::from_secs_f64(k as f64 / (rate * speed));
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        if !sink(&f.to_json()) {
            return Ok(k);
        }
    }
    Ok(frames.len())
}
