//! Deterministic simulation loop: world → perception → policy → network per
//! tick, with the event log, scoring, telemetry, replay and live gateway.

mod gateway;
mod log;
mod score;
mod telemetry;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crossbeam_channel::Receiver;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{Setpoint, SetpointKind};
use crate::geometry::{Vec3, wrap_angle};
use crate::ids::{DroneId, SwarmId};
use crate::network::{Command, Delivery, DropReason, Network, NetworkError, NetworkParams, Priority, Recipients, SwarmMessage, Topology, GCS};
use crate::perception::{sense, SensorSuite, TargetClass, TargetObservation};
use crate::policy::{
    step_operational, step_strategic, step_tactical, ArrivalPurpose, DronePolicyState, LockChange, OperationalState as S,
    Outbound, Output, StepContext, StrategicInput, SwarmEvent, SwarmStatus, TacticalState, TeamState,
};
use crate::scenario::{
    compile_policies, serialize_scenario, validate_scenario, Activation, CommandTarget, EntityKind, OperatorCommand, ScenarioError,
    ScenarioSpec, ScriptAction, ScriptWhen, StrategicTable, SwarmRole,
};
use crate::world::{step_world, WorldError, WorldState};

pub use gateway::{gateway_serve, parse_request, replay_serve, Request, ServeHandle, ServeOptions};
pub use log::{detail_field, EventKind, EventLog, EventRecord, LogError, RUN_END};
pub use score::{score_mission, MissionReport, Outcome, PhaseMark, TaskTally, FOLLOW_FRACTION, FOLLOW_TOLERANCE};
pub use telemetry::{replay, replay_frames, DroneFrame, EntityFrame, LinkFrame, TelemetryFrame, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    /// Every message addressed to the drone is discarded on receipt.
    DropAllRx,
    /// The drone's target lock jumps to another target.
    LockSwap,
    /// ARM/TAKEOFF commands are ignored.
    NoTakeoff,
    /// The detector returns nothing.
    SensorBlind,
    /// Horizontal GPS navigation has no effect.
    NavFault,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::DropAllRx => "DropAllRx",
            FaultKind::LockSwap => "LockSwap",
            FaultKind::NoTakeoff => "NoTakeoff",
            FaultKind::SensorBlind => "SensorBlind",
            FaultKind::NavFault => "NavFault",
        }
    }
}

/// A fault injected at `time` on one drone, for `duration` seconds or for
/// the rest of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub time: f64,
    pub kind: FaultKind,
    pub target: DroneId,
    pub duration: Option<f64>,
}

impl Fault {
    pub fn active_at(&self, t: f64) -> bool {
        t + 1e-9 >= self.time && self.duration.map_or(true, |d| t < self.time + d - 1e-9)
    }
}

/// `KIND:TARGET[@TIME][+DURATION]`, e.g. `NoTakeoff:d9`, `DropAllRx:d2@100+20`.
impl FromStr for Fault {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, EngineError> {
        let bad = || EngineError::BadFault(s.to_owned());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let kind = [FaultKind::DropAllRx, FaultKind::LockSwap, FaultKind::NoTakeoff, FaultKind::SensorBlind, FaultKind::NavFault]
            .into_iter()
            .find(|k| k.name() == kind)
            .ok_or_else(bad)?;
        let (rest, duration) = match rest.split_once('+') {
            Some((r, d)) => (r, Some(d.parse::<f64>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let (target, time) = match rest.split_once('@') {
            Some((t, at)) => (t, at.trim_end_matches('s').parse::<f64>().map_err(|_| bad())?),
            None => (rest, 0.0),
        };
        if target.is_empty() || time < 0.0 || duration.is_some_and(|d| d <= 0.0) {
            return Err(bad());
        }
        Ok(Fault { time, kind, target: target.into(), duration })
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}@{}", self.kind.name(), self.target, self.time)?;
        if let Some(d) = self.duration {
            write!(f, "+{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: ScenarioSpec,
    pub physics_rate: f64,
    pub perception_rate: f64,
    pub seed: u64,
    pub fault_injections: Vec<Fault>,
}

impl SimConfig {
    pub fn new(scenario: ScenarioSpec) -> Self {
        Self {
            physics_rate: 1.0 / scenario.timestep,
            perception_rate: scenario.mission.perception_rate(),
            seed: scenario.rng_seed,
            fault_injections: Vec::new(),
            scenario,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_faults(mut self, faults: Vec<Fault>) -> Self {
        self.fault_injections = faults;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let violations = validate_scenario(&self.scenario);
        if !violations.is_empty() {
            return Err(ScenarioError::Invalid(violations).into());
        }
        if !(self.physics_rate >= self.perception_rate && self.perception_rate > 0.0) {
            return Err(EngineError::Config("physics_rate must be >= perception_rate > 0".into()));
        }
        if ((1.0 / self.physics_rate) - self.scenario.timestep).abs() > 1e-9 {
            return Err(EngineError::Config("physics_rate must match the scenario timestep".into()));
        }
        if (self.perception_rate - self.scenario.mission.perception_rate()).abs() > 1e-9 {
            return Err(EngineError::Config("perception_rate must match the sensor rate".into()));
        }
        for f in &self.fault_injections {
            if !self.scenario.entity(&f.target).is_some_and(|e| e.kind == EntityKind::Drone) {
                return Err(EngineError::UnknownFaultTarget(f.target.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fault injection references unknown drone `{0}`")]
    UnknownFaultTarget(String),
    #[error("malformed fault spec `{0}` (expected KIND:TARGET[@TIME][+DURATION])")]
    BadFault(String),
    #[error("unknown command target `{0}`")]
    UnknownTarget(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Mission phases in the order a complete run reaches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Search,
    PersonFound,
    PersonEnteredCar,
    VehicleTracking,
    PersonExitedCar,
    HandoffArmed,
    HandoffFollowing,
    Recovery,
    MissionComplete,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::Search,
        Phase::PersonFound,
        Phase::PersonEnteredCar,
        Phase::VehicleTracking,
        Phase::PersonExitedCar,
        Phase::HandoffArmed,
        Phase::HandoffFollowing,
        Phase::Recovery,
        Phase::MissionComplete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Search => "Search",
            Phase::PersonFound => "PersonFound",
            Phase::PersonEnteredCar => "PersonEnteredCar",
            Phase::VehicleTracking => "VehicleTracking",
            Phase::PersonExitedCar => "PersonExitedCar",
            Phase::HandoffArmed => "HandoffArmed",
            Phase::HandoffFollowing => "HandoffFollowing",
            Phase::Recovery => "Recovery",
            Phase::MissionComplete => "MissionComplete",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Operator command from a live source; `at` pins it to a sim time.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveCommand {
    pub at: Option<f64>,
    pub command: OperatorCommand,
}

/// Independent RNG stream derived from the run seed and a name.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    ChaCha8Rng::from_seed(digest.into())
}

pub(crate) fn fmt_p2(p: Vec3) -> String {
    format!("{:.2},{:.2},{:.2}", p.x, p.y, p.z)
}

pub(crate) fn parse_point(s: &str) -> Option<Vec3> {
    let mut it = s.split(',').map(str::parse::<f64>);
    let (x, y, z) = (it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?);
    Some(Vec3::new(x, y, z))
}

const SNAPSHOT_PERIOD: f64 = 1.0;

/// A running mission.
pub struct Simulation {
    cfg: SimConfig,
    scenario_text: String,
    world: WorldState,
    policies: BTreeMap<DroneId, DronePolicyState>,
    tactical: BTreeMap<SwarmId, TacticalState>,
    table: StrategicTable,
    team: TeamState,
    network: Network,
    net_rng: ChaCha8Rng,
    sense_rngs: BTreeMap<DroneId, ChaCha8Rng>,
    suite: SensorSuite,
    tick: u64,
    perception_every: u64,
    snapshot_every: u64,
    setpoints: BTreeMap<DroneId, Setpoint>,
    inbox: BTreeMap<DroneId, Vec<SwarmMessage>>,
    operator_queue: Vec<(f64, u64, OperatorCommand)>,
    operator_seq: u64,
    lockswaps_done: BTreeSet<usize>,
    next_msg_id: u64,
    records: Vec<EventRecord>,
    hasher: Sha256,
    phases: BTreeSet<Phase>,
    outcome: Option<Outcome>,
    base: Vec3,
    paused: bool,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let spec = &cfg.scenario;
        let bundles = compile_policies(spec)?;
        let world = WorldState::from_scenario(spec);
        let mut policies = BTreeMap::new();
        for (id, bundle) in bundles {
            let home = world.entities[&id].pose.position;
            policies.insert(id.clone(), DronePolicyState::new(id, bundle, home));
        }
        let table = policies.values().next().map(|p| p.bundle.strategic.clone()).unwrap_or_default();
        let mut tactical = BTreeMap::new();
        for ps in policies.values() {
            tactical.entry(ps.swarm().clone()).or_insert_with(|| TacticalState::new(ps.bundle.tactical.clone()));
        }
        let team = TeamState::new(spec.swarms.iter().map(|s| {
            let status = if s.activation == Activation::AtStart { SwarmStatus::Active } else { SwarmStatus::Dormant };
            (s.id.clone(), status)
        }));
        let network = Network::new(NetworkParams::from(&spec.network_params), table.rosters.clone());
        let sense_rngs = policies.keys().map(|id| (id.clone(), substream(cfg.seed, &format!("sense/{id}")))).collect();
        let mut operator_queue = Vec::new();
        for act in &spec.script {
            if let (ScriptWhen::At(t), ScriptAction::Operator(cmd)) = (&act.when, &act.action) {
                operator_queue.push((*t, operator_queue.len() as u64, cmd.clone()));
            }
        }
        operator_queue.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let dt = spec.timestep;
        let base = spec.base_station().map_or(Vec3::ZERO, |b| b.spawn_pose.position);
        let mut sim = Self {
            scenario_text: serialize_scenario(spec),
            suite: SensorSuite::from_mission(&spec.mission),
            net_rng: substream(cfg.seed, "network"),
            perception_every: ((1.0 / (cfg.perception_rate * dt)).round() as u64).max(1),
            snapshot_every: ((SNAPSHOT_PERIOD / dt).round() as u64).max(1),
            operator_seq: operator_queue.len() as u64,
            operator_queue,
            world,
            policies,
            tactical,
            table,
            team,
            network,
            sense_rngs,
            tick: 0,
            setpoints: BTreeMap::new(),
            inbox: BTreeMap::new(),
            lockswaps_done: BTreeSet::new(),
            next_msg_id: 1,
            records: Vec::new(),
            hasher: Sha256::new(),
            phases: BTreeSet::new(),
            outcome: None,
            base,
            paused: false,
            cfg,
        };
        let n = &sim.cfg.scenario.network_params;
        let detail = format!(
            "phase={} comm_range={} gcs_range={} base={}",
            Phase::Search.name(),
            n.comm_range,
            n.gcs_range,
            fmt_p2(base)
        );
        sim.phases.insert(Phase::Search);
        sim.record(0.0, EventKind::MissionPhase, "team", detail);
        // Swarms active at start are already taking off.
        let initial: Vec<(DroneId, S)> =
            sim.policies.iter().filter(|(_, p)| p.op != S::IDLE_SLEEPING).map(|(id, p)| (id.clone(), p.op)).collect();
        for (id, op) in initial {
            sim.record(0.0, EventKind::StateTransition, id.to_string(), format!("from={} to={op}", S::IDLE_SLEEPING));
        }
        sim.snapshot(0.0);
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.cfg.scenario
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn policies(&self) -> &BTreeMap<DroneId, DronePolicyState> {
        &self.policies
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn set_paused(&mut self, paused: bool) {
        self.paused = paused;
    }

    /// Hex digest over every record logged so far.
    pub fn state_hash(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    fn record(&mut self, time: f64, kind: EventKind, subject: impl Into<String>, detail: impl Into<String>) {
        // Held at the printed precision so a parsed log scores identically.
        let time = (time * 100.0).round() / 100.0;
        let r = EventRecord::new(time, kind, subject, detail);
        self.hasher.update(r.to_string().as_bytes());
        self.hasher.update(b"\n");
        self.records.push(r);
    }

    /// Queues an operator command. Without `at` it applies at the next tick
    /// boundary; a time in the past is clamped to now.
    pub fn inject(&mut self, cmd: LiveCommand) -> Result<f64, EngineError> {
        self.check_target(&cmd.command)?;
        let at = cmd.at.unwrap_or(self.world.time).max(self.world.time);
        let pos = self.operator_queue.partition_point(|(t, _, _)| *t <= at);
        self.operator_queue.insert(pos, (at, self.operator_seq, cmd.command));
        self.operator_seq += 1;
        Ok(at)
    }

    fn check_target(&self, cmd: &OperatorCommand) -> Result<(), EngineError> {
        let spec = &self.cfg.scenario;
        let ok = |t: &CommandTarget| match t {
            CommandTarget::Drone(d) => spec.entity(d).is_some_and(|e| e.kind == EntityKind::Drone),
            CommandTarget::Swarm(s) => spec.swarm(s).is_some(),
            CommandTarget::Team => true,
        };
        let good = match cmd {
            OperatorCommand::Arm(t) | OperatorCommand::Land(t) | OperatorCommand::Rtb(t) => ok(t),
            OperatorCommand::Goto(d, _) => ok(&CommandTarget::Drone(d.clone())),
            OperatorCommand::MissionEnd => true,
        };
        if good {
            Ok(())
        } else {
            Err(EngineError::UnknownTarget(format!("{cmd:?}")))
        }
    }

    fn new_message(&mut self, time: f64, out: Outbound) -> SwarmMessage {
        let msg = SwarmMessage::new(self.next_msg_id, out.priority, out.sender, out.recipients, out.command, time);
        self.next_msg_id += 1;
        let detail = format!("id={} {}", msg.id, msg.canonical());
        self.record(time, EventKind::MessageSent, msg.sender.to_string(), detail);
        msg
    }

    fn apply_operator(&mut self, time: f64, cmd: OperatorCommand, outgoing: &mut Vec<SwarmMessage>) {
        let gcs = DroneId::from(GCS);
        let to = |t: &CommandTarget| match t {
            CommandTarget::Drone(d) => Recipients::Drone(d.clone()),
            CommandTarget::Swarm(s) => Recipients::Swarm(s.clone()),
            CommandTarget::Team => Recipients::Team,
        };
        let (recipients, command) = match &cmd {
            OperatorCommand::Arm(t) => (to(t), Command::Arm),
            OperatorCommand::Land(t) => (to(t), Command::Land),
            OperatorCommand::Rtb(t) => (to(t), Command::Rtb),
            OperatorCommand::Goto(d, p) => (Recipients::Drone(d.clone()), Command::Goto(Some(*p))),
            OperatorCommand::MissionEnd => {
                self.strategic(time, StrategicInput::OperatorMissionEnd, outgoing);
                return;
            }
        };
        let msg = self.new_message(time, Outbound { sender: gcs, priority: Priority::Strategic, recipients, command });
        outgoing.push(msg);
    }

    fn strategic(&mut self, time: f64, input: StrategicInput, outgoing: &mut Vec<SwarmMessage>) {
        match step_strategic(&self.team, &self.table, &input) {
            Ok((team, msgs)) => {
                let was_over = self.team.mission_over;
                self.team = team;
                if let (StrategicInput::Behavior(ev), false) = (&input, msgs.is_empty()) {
                    let phase = match ev.kind {
                        crate::scenario::BehaviorKind::PersonEnteredCar => Phase::PersonEnteredCar,
                        crate::scenario::BehaviorKind::PersonExitedCar => Phase::PersonExitedCar,
                    };
                    self.reach(time, phase);
                }
                for m in msgs {
                    let msg = self.new_message(time, m);
                    outgoing.push(msg);
                }
                if self.team.mission_over && !was_over {
                    self.reach(time, Phase::Recovery);
                }
            }
            Err(e) => self.record(time, EventKind::MissionPhase, "team", format!("strategic-error {e}")),
        }
    }

    fn reach(&mut self, time: f64, phase: Phase) {
        if self.phases.insert(phase) {
            self.record(time, EventKind::MissionPhase, "team", format!("phase={}", phase.name()));
        }
    }

    fn fault_active(&self, kind: FaultKind, drone: &DroneId, t: f64) -> bool {
        self.cfg.fault_injections.iter().any(|f| f.kind == kind && &f.target == drone && f.active_at(t))
    }

    fn snapshot(&mut self, time: f64) {
        let detail = self
            .world
            .entities
            .iter()
            .filter(|(_, e)| !matches!(e.kind, EntityKind::BaseStation | EntityKind::Obstacle))
            .map(|(id, e)| {
                let p = e.pose.position;
                format!("{id}={:.2},{:.2},{:.2},{:.3}", p.x, p.y, p.z, e.pose.yaw)
            })
            .collect::<Vec<_>>()
            .join(";");
        self.record(time, EventKind::Snapshot, "world", detail);
    }

    fn topology(&self) -> Topology {
        let mut t: Topology = self.policies.keys().map(|id| (id.clone(), self.world.entities[id].pose.position)).collect();
        t.insert(GCS.into(), self.base + Vec3::new(0.0, 0.0, 2.0));
        t
    }

    /// Advances one physics tick.
    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.outcome.is_some() {
            return Ok(());
        }
        let dt = self.cfg.scenario.timestep;
        let t0 = self.world.time;
        let mut outgoing = Vec::new();

        // Operator commands due at this tick boundary.
        while self.operator_queue.first().is_some_and(|(at, _, _)| *at <= t0 + 1e-9) {
            let (_, _, cmd) = self.operator_queue.remove(0);
            self.apply_operator(t0, cmd, &mut outgoing);
        }

        // Faults.
        for (i, f) in self.cfg.fault_injections.clone().into_iter().enumerate() {
            if let Some(ps) = self.policies.get_mut(&f.target) {
                match f.kind {
                    FaultKind::NoTakeoff => ps.no_takeoff = f.active_at(t0),
                    FaultKind::LockSwap if f.active_at(t0) && !self.lockswaps_done.contains(&i) => {
                        self.lockswaps_done.insert(i);
                        let class = ps.wanted_class();
                        let current = ps.lock.locked_id.clone();
                        let kind = match class {
                            TargetClass::Car => EntityKind::Car,
                            _ => EntityKind::Person,
                        };
                        let other = self
                            .world
                            .entities
                            .iter()
                            .find(|(id, e)| e.kind == kind && Some(*id) != current.as_ref())
                            .map(|(id, _)| id.clone());
                        if current.is_some() {
                            ps.lock.locked_id = other.clone();
                            ps.lock.acquired_at = t0;
                            ps.lock.last_seen = t0;
                            let detail = match other {
                                Some(o) => format!("lock=swap class={} target={o}", class.name()),
                                None => format!("lock=lost class={}", class.name()),
                            };
                            self.record(t0, EventKind::ObservationSummary, f.target.to_string(), detail);
                        }
                    }
                    _ => {}
                }
            }
        }

        // World.
        let mut setpoints = std::mem::take(&mut self.setpoints);
        for (id, sp) in setpoints.iter_mut() {
            if self.fault_active(FaultKind::NavFault, id, t0) && self.policies[id].op.contains(S::NAVIGATING_TO_GPS) {
                if let SetpointKind::GlobalPosition { x, y, .. } = &mut sp.kind {
                    let p = self.world.entities[id].pose.position;
                    (*x, *y) = (p.x, p.y);
                }
            }
        }
        let collisions_before = self.world.collision_log.len();
        self.world = step_world(self.world.clone(), &setpoints, dt)?;
        let t = self.world.time;
        for c in self.world.collision_log[collisions_before..].to_vec() {
            self.record(t, EventKind::Collision, c.a.to_string(), format!("other={} distance={:.2}", c.b, c.distance));
        }

        // Perception.
        let perceive = self.tick % self.perception_every == 0;
        let mut observations: BTreeMap<DroneId, Vec<TargetObservation>> = BTreeMap::new();
        if perceive {
            for id in self.policies.keys() {
                let ent = &self.world.entities[id];
                if ent.pose.position.z <= 0.2 {
                    continue;
                }
                let rng = self.sense_rngs.get_mut(id).expect("one stream per drone");
                let obs = sense(&self.world, id, &self.suite, rng);
                let blind = self.cfg.fault_injections.iter().any(|f| f.kind == FaultKind::SensorBlind && &f.target == id && f.active_at(t));
                observations.insert(id.clone(), if blind { Vec::new() } else { obs });
            }
        }

        // Operational layer.
        let airborne: Vec<(DroneId, crate::geometry::Pose)> = self
            .policies
            .keys()
            .map(|id| (id.clone(), self.world.entities[id].pose))
            .filter(|(_, p)| p.position.z > 0.2)
            .collect();
        let ids: Vec<DroneId> = self.policies.keys().cloned().collect();
        let mut events: BTreeMap<SwarmId, Vec<(DroneId, SwarmEvent)>> = BTreeMap::new();
        for id in &ids {
            let pose = self.world.entities[id].pose;
            let min_sep = self.policies[id].bundle.operational.min_sep;
            let neighbors: Vec<(f64, f64)> = airborne
                .iter()
                .filter(|(other, _)| other != id)
                .filter_map(|(_, p)| {
                    let d = p.position - pose.position;
                    let r = d.horizontal_norm();
                    (r < min_sep).then(|| (r, wrap_angle(d.y.atan2(d.x) - pose.yaw)))
                })
                .collect();
            let inbox = self.inbox.remove(id).unwrap_or_default();
            let ps = self.policies.remove(id).expect("id from key set");
            let before = ps.op;
            let ctx = StepContext { time: t, dt, pose, neighbors: &neighbors, fov: self.suite.rgb_fov };
            let obs = observations.get(id).map(Vec::as_slice);
            let obs = if perceive { Some(obs.unwrap_or(&[])) } else { None };
            let (ps, sp, outputs) = step_operational(ps, obs, &inbox, &ctx);
            let after = ps.op;
            let role = ps.role();
            let swarm = ps.swarm().clone();
            self.policies.insert(id.clone(), ps);
            self.setpoints.insert(id.clone(), sp);
            if before != after {
                self.record(t, EventKind::StateTransition, id.to_string(), format!("from={before} to={after}"));
                if role == SwarmRole::HandoffFollow && after.contains(S::TAKEOFF) {
                    self.reach(t, Phase::HandoffArmed);
                }
            }
            for o in outputs {
                match o {
                    Output::Send { priority, recipients, command } => {
                        let msg = self.new_message(t, Outbound { sender: id.clone(), priority, recipients, command });
                        outgoing.push(msg);
                    }
                    Output::Event(ev) => {
                        match &ev {
                            SwarmEvent::TargetFound { class, location } => {
                                let d = format!("event=TargetFound class={} location={}", class.name(), fmt_p2(*location));
                                self.record(t, EventKind::ObservationSummary, id.to_string(), d);
                                if role == SwarmRole::SearchFollow {
                                    self.reach(t, Phase::PersonFound);
                                }
                            }
                            SwarmEvent::TargetLost { class } => {
                                self.record(t, EventKind::ObservationSummary, id.to_string(), format!("event=TargetLost class={}", class.name()));
                            }
                            SwarmEvent::Behavior(b) => {
                                let d = format!("kind={} location={}", b.kind.name(), fmt_p2(b.location));
                                self.record(t, EventKind::ComplexBehavior, id.to_string(), d);
                            }
                            SwarmEvent::TaskComplete => {
                                self.record(t, EventKind::ObservationSummary, id.to_string(), "event=TaskComplete");
                            }
                        }
                        events.entry(swarm.clone()).or_default().push((id.clone(), ev));
                    }
                    Output::Arrived { purpose, point } => {
                        let d = match purpose {
                            ArrivalPurpose::Goto => format!("purpose=goto point={}", fmt_p2(point)),
                            ArrivalPurpose::SearchWaypoint(i) => format!("purpose=search-waypoint index={i} point={}", fmt_p2(point)),
                            ArrivalPurpose::Home => format!("purpose=home point={}", fmt_p2(point)),
                        };
                        self.record(t, EventKind::Arrival, id.to_string(), d);
                    }
                    Output::Lock(change) => {
                        let d = match &change {
                            LockChange::Acquired { class, target } => format!("lock=acquired class={} target={target}", class.name()),
                            LockChange::Lost { class } => format!("lock=lost class={}", class.name()),
                        };
                        self.record(t, EventKind::ObservationSummary, id.to_string(), d);
                        if let LockChange::Acquired { .. } = change {
                            if role == SwarmRole::TrackVehicle && after.contains(S::TRACKING) {
                                self.reach(t, Phase::VehicleTracking);
                            }
                            if role == SwarmRole::HandoffFollow && after.contains(S::FOLLOWING) {
                                self.reach(t, Phase::HandoffFollowing);
                            }
                        }
                    }
                    Output::FollowSample { range, r0, cx } => {
                        let d = format!("sample range={range:.3} r0={r0:.3} cx={cx:.3}");
                        self.record(t, EventKind::ObservationSummary, id.to_string(), d);
                    }
                    Output::Rejected { command, reason } => {
                        let d = format!("rejected cmd={} reason={reason}", command.name());
                        self.record(t, EventKind::StateTransition, id.to_string(), d);
                    }
                }
            }
        }

        // Tactical and strategic layers.
        let mut strategic_inputs = Vec::new();
        for (swarm, evs) in events {
            let ts = self.tactical.get_mut(&swarm).expect("every swarm has tactical state");
            let group: Vec<&DronePolicyState> = ts.rules.members.iter().filter_map(|m| self.policies.get(m)).collect();
            let out = step_tactical(ts, &group, &evs, t);
            for m in out.messages {
                let msg = self.new_message(t, m);
                outgoing.push(msg);
            }
            strategic_inputs.extend(out.strategic);
        }
        for input in strategic_inputs {
            self.strategic(t, input, &mut outgoing);
        }

        // Network.
        let topology = self.topology();
        let Delivery { delivered, dropped, .. } = self.network.deliver(self.tick, outgoing, &topology, &mut self.net_rng)?;
        for d in dropped {
            let detail = format!("id={} {} reason={}", d.message.id, d.message.canonical(), d.reason.name());
            self.record(t, EventKind::MessageDropped, d.recipient.to_string(), detail);
        }
        for (to, msgs) in delivered {
            let rx_fault = self.fault_active(FaultKind::DropAllRx, &to, t);
            for m in msgs {
                let detail = format!("id={} {}", m.id, m.canonical());
                if rx_fault {
                    let reason = DropReason::RxFault.name();
                    self.record(t, EventKind::MessageDropped, to.to_string(), format!("{detail} reason={reason}"));
                } else {
                    self.record(t, EventKind::MessageDelivered, to.to_string(), detail);
                    self.inbox.entry(to.clone()).or_default().push(m);
                }
            }
        }

        self.tick += 1;
        if self.tick % self.snapshot_every == 0 {
            self.snapshot(t);
        }

        let all_down = self.policies.values().all(|p| p.op == S::IDLE_SLEEPING);
        if self.team.mission_over && all_down {
            // An operator can end the mission early; that is not completion.
            if Phase::ALL[..Phase::ALL.len() - 1].iter().all(|p| self.phases.contains(p)) {
                self.reach(t, Phase::MissionComplete);
            }
            self.finish(t);
        } else if t >= self.cfg.scenario.duration_limit - 1e-9 {
            self.finish(t);
        }
        Ok(())
    }

    fn finish(&mut self, t: f64) {
        let outcome = if self.phases.contains(&Phase::MissionComplete) {
            Outcome::Complete
        } else if self.phases.len() > 1 {
            Outcome::Partial
        } else {
            Outcome::Failed
        };
        self.record(t, EventKind::MissionPhase, "team", format!("{RUN_END} outcome={}", outcome.name()));
        self.outcome = Some(outcome);
    }

    /// Steps until the run ends.
    pub fn run_to_end(&mut self) -> Result<(), EngineError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn event_log(&self) -> EventLog {
        EventLog { scenario: self.scenario_text.clone(), records: self.records.clone() }
    }

    pub fn report(&self) -> MissionReport {
        score_mission(&self.records, &self.cfg.scenario)
    }

    /// Live telemetry frame; `events` are the log lines to attach.
    pub fn telemetry_frame(&self, events: Vec<String>) -> TelemetryFrame {
        telemetry::live_frame(self, events)
    }
}

/// Runs a mission to completion, draining live commands at tick boundaries.
pub fn run(config: SimConfig, commands: Option<&Receiver<LiveCommand>>) -> Result<(EventLog, MissionReport), EngineError> {
    let mut sim = Simulation::new(config)?;
    while !sim.is_finished() {
        if let Some(rx) = commands {
            while let Ok(cmd) = rx.try_recv() {
                sim.inject(cmd)?;
            }
        }
        sim.step()?;
    }
    Ok((sim.event_log(), sim.report()))
}
