//! Ground truth: entity kinematics, scripted actors, wind and collisions.

mod wind;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Setpoint, SetpointKind};
use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::ids::{DroneId, EntityId};
use crate::scenario::{EntityKind, ScenarioSpec, ScriptAction, ScriptWhen, ScriptedAction, WorldTrigger};

pub use wind::{wind_at, WindField};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("setpoint addressed to `{0}`, which is not a drone")]
    NotADrone(EntityId),
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("timestep must be > 0")]
    BadTimestep,
}

/// Flight-controller plant parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneDynamics {
    /// First-order velocity tracking time constant.
    pub tau: f64,
    /// Time over which a local position setpoint is flown.
    pub local_position_horizon: f64,
    /// Proportional gain of the global position mode.
    pub position_gain: f64,
    pub yaw_gain: f64,
    pub max_yaw_rate: f64,
    pub drone_collision_radius: f64,
    pub obstacle_collision_radius: f64,
}

impl Default for DroneDynamics {
    fn default() -> Self {
        Self {
            tau: 0.5,
            local_position_horizon: 0.2,
            position_gain: 0.8,
            yaw_gain: 2.0,
            max_yaw_rate: 1.5,
            drone_collision_radius: 2.0,
            obstacle_collision_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Plan {
    Still,
    Walk { to: (f64, f64), speed: f64 },
    Board { car: EntityId },
    Route { waypoints: Vec<(f64, f64)>, next: usize, speed: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub kind: EntityKind,
    pub pose: Pose,
    /// Ground velocity, wind included.
    pub velocity: Vec3,
    pub carried_by: Option<EntityId>,
    pub max_speed: f64,
    air_velocity: Vec3,
    plan: Plan,
}

impl EntityState {
    pub fn airborne(&self) -> bool {
        self.kind == EntityKind::Drone && self.pose.position.z > 0.05
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorldEventKind {
    Arrived,
    Entered,
    Exited,
}

/// Ground-truth actor events produced by one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEvent {
    pub time: f64,
    pub kind: WorldEventKind,
    pub subject: EntityId,
    pub other: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub time: f64,
    pub a: EntityId,
    pub b: EntityId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub entities: BTreeMap<EntityId, EntityState>,
    pub wind: WindField,
    pub dynamics: DroneDynamics,
    pub sun_azimuth: Option<f64>,
    /// Timed actions, sorted by time.
    pub pending_script: Vec<ScriptedAction>,
    /// Trigger-bound actions waiting for their event.
    pub pending_triggers: Vec<ScriptedAction>,
    pub collision_log: Vec<CollisionRecord>,
    /// Events raised by the most recent step.
    pub last_events: Vec<WorldEvent>,
    fired: Vec<ScriptedAction>,
    in_contact: BTreeSet<(EntityId, EntityId)>,
}

impl WorldState {
    /// Builds the initial world. Operator commands in the script are left to
    /// the caller.
    pub fn from_scenario(spec: &ScenarioSpec) -> Self {
        let entities = spec
            .entities
            .iter()
            .map(|e| {
                (
                    e.id.clone(),
                    EntityState {
                        kind: e.kind,
                        pose: e.spawn_pose,
                        velocity: Vec3::ZERO,
                        carried_by: None,
                        max_speed: e.max_speed,
                        air_velocity: Vec3::ZERO,
                        plan: Plan::Still,
                    },
                )
            })
            .collect();
        let (mut timed, mut triggered) = (Vec::new(), Vec::new());
        for act in &spec.script {
            if matches!(act.action, ScriptAction::Operator(_)) {
                continue;
            }
            match act.when {
                ScriptWhen::At(_) => timed.push(act.clone()),
                ScriptWhen::On(_) => triggered.push(act.clone()),
            }
        }
        timed.sort_by(|a, b| script_time(a).total_cmp(&script_time(b)));
        Self {
            time: 0.0,
            entities,
            wind: spec.wind.into(),
            dynamics: DroneDynamics::default(),
            sun_azimuth: spec.sun_azimuth,
            pending_script: timed,
            pending_triggers: triggered,
            collision_log: Vec::new(),
            last_events: Vec::new(),
            fired: Vec::new(),
            in_contact: BTreeSet::new(),
        }
    }

    pub fn entity(&self, id: &EntityId) -> Option<&EntityState> {
        self.entities.get(id)
    }

    pub fn drone_ids(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.iter().filter(|(_, e)| e.kind == EntityKind::Drone).map(|(id, _)| id)
    }
}

fn script_time(a: &ScriptedAction) -> f64 {
    match a.when {
        ScriptWhen::At(t) => t,
        ScriptWhen::On(_) => f64::INFINITY,
    }
}

/// Converts a setpoint into a world-frame velocity command and a
/// counter-clockwise yaw rate.
pub fn velocity_command(sp: &Setpoint, pose: &Pose, max_speed: f64, dyn_: &DroneDynamics) -> (Vec3, f64) {
    let (mut v, yaw_rate) = match sp.kind {
        SetpointKind::LocalVelocity { vx, vy, vz, yaw_rate } => {
            let (wx, wy) = pose.body_to_world(vx, vy);
            // Flight-controller yaw rate is clockwise-positive.
            (Vec3::new(wx, wy, vz), -yaw_rate)
        }
        SetpointKind::LocalPosition { dx, dy, dz, dyaw } => {
            let h = dyn_.local_position_horizon;
            let (wx, wy) = pose.body_to_world(dx / h, dy / h);
            (Vec3::new(wx, wy, dz / h), dyaw / h)
        }
        SetpointKind::GlobalPosition { x, y, z, yaw, speed } => {
            let d = Vec3::new(x, y, z) - pose.position;
            let mut h = Vec3::new(d.x, d.y, 0.0).scale(dyn_.position_gain);
            h = h.clamp_norm(speed);
            let vz = (d.z * dyn_.position_gain * 2.0).clamp(-max_speed, max_speed);
            (Vec3::new(h.x, h.y, vz), dyn_.yaw_gain * wrap_angle(yaw - pose.yaw))
        }
    };
    if sp.overlay != (0.0, 0.0) {
        let (ox, oy) = pose.body_to_world(sp.overlay.0, sp.overlay.1);
        v = v + Vec3::new(ox, oy, 0.0);
    }
    (v.clamp_norm(max_speed), yaw_rate.clamp(-dyn_.max_yaw_rate, dyn_.max_yaw_rate))
}

fn move_towards(pos: Vec3, to: (f64, f64), step: f64) -> (Vec3, bool) {
    let d = Vec3::new(to.0 - pos.x, to.1 - pos.y, 0.0);
    let n = d.horizontal_norm();
    if n <= step {
        (Vec3::new(to.0, to.1, pos.z), true)
    } else {
        (pos + d.scale(step / n), false)
    }
}

fn apply_action(state: &mut WorldState, act: &ScriptedAction) {
    let now = state.time;
    let Some(ent) = state.entities.get_mut(&act.entity) else { return };
    match &act.action {
        ScriptAction::WalkTo { to, speed } => {
            if ent.carried_by.is_none() {
                ent.plan = Plan::Walk { to: *to, speed: speed.min(ent.max_speed) };
            }
        }
        ScriptAction::EnterCar { car } => {
            if ent.carried_by.is_none() {
                ent.plan = Plan::Board { car: car.clone() };
            }
        }
        ScriptAction::DriveRoute { waypoints, speed } => {
            ent.plan = Plan::Route { waypoints: waypoints.clone(), next: 0, speed: speed.min(ent.max_speed) };
        }
        ScriptAction::StopCar | ScriptAction::Idle => {
            ent.plan = Plan::Still;
            ent.velocity = Vec3::ZERO;
        }
        ScriptAction::ExitCar => {
            if let Some(car) = ent.carried_by.take() {
                ent.plan = Plan::Still;
                ent.velocity = Vec3::ZERO;
                state.last_events.push(WorldEvent {
                    time: now,
                    kind: WorldEventKind::Exited,
                    subject: act.entity.clone(),
                    other: Some(car),
                });
            }
        }
        ScriptAction::Operator(_) => {}
    }
}

/// Advances the world by `dt`: applies due script actions, integrates every
/// entity, couples carried persons to their car, and records collisions.
pub fn step_world(mut state: WorldState, setpoints: &BTreeMap<DroneId, Setpoint>, dt: f64) -> Result<WorldState, WorldError> {
    if !(dt > 0.0) {
        return Err(WorldError::BadTimestep);
    }
    for id in setpoints.keys() {
        match state.entities.get(id) {
            Some(e) if e.kind == EntityKind::Drone => {}
            Some(_) => return Err(WorldError::NotADrone(id.clone())),
            None => return Err(WorldError::UnknownEntity(id.clone())),
        }
    }
    state.last_events.clear();

    let fired = std::mem::take(&mut state.fired);
    for act in &fired {
        apply_action(&mut state, act);
    }
    let due = state.pending_script.iter().take_while(|a| script_time(a) <= state.time + 1e-9).count();
    let now_due: Vec<ScriptedAction> = state.pending_script.drain(..due).collect();
    for act in &now_due {
        apply_action(&mut state, act);
    }

    let time = state.time;
    let wind = wind_at(&state.wind, time);
    let dynamics = state.dynamics;
    let ids: Vec<EntityId> = state.entities.keys().cloned().collect();

    // Cars and walkers first so boarding sees the car's current pose.
    let car_poses: BTreeMap<EntityId, Pose> = state
        .entities
        .iter()
        .filter(|(_, e)| e.kind == EntityKind::Car)
        .map(|(id, e)| (id.clone(), e.pose))
        .collect();

    let mut events = Vec::new();
    for id in &ids {
        let ent = state.entities.get_mut(id).expect("id from key set");
        match ent.kind {
            EntityKind::Drone => {
                let sp = setpoints.get(id).copied().unwrap_or_else(Setpoint::hold);
                let (cmd, yaw_rate) = velocity_command(&sp, &ent.pose, ent.max_speed, &dynamics);
                let alpha = (dt / dynamics.tau).min(1.0);
                ent.air_velocity = ent.air_velocity + (cmd - ent.air_velocity).scale(alpha);
                let on_ground = ent.pose.position.z <= 0.05 && ent.air_velocity.z <= 0.0;
                let mut ground_v = ent.air_velocity;
                if on_ground {
                    ground_v = Vec3::ZERO;
                    ent.air_velocity = Vec3::ZERO;
                } else {
                    ground_v = ground_v + Vec3::new(wind.0, wind.1, 0.0);
                }
                let mut p = ent.pose.position + ground_v.scale(dt);
                if p.z < 0.0 {
                    p.z = 0.0;
                    ground_v.z = 0.0;
                    ent.air_velocity.z = 0.0;
                }
                ent.pose.position = p;
                if !on_ground {
                    ent.pose.yaw = wrap_angle(ent.pose.yaw + yaw_rate * dt);
                }
                ent.velocity = ground_v;
            }
            EntityKind::Person | EntityKind::Car => {
                if ent.carried_by.is_some() {
                    continue;
                }
                let pos = ent.pose.position;
                let (new_pos, done) = match &mut ent.plan {
                    Plan::Still => (pos, false),
                    Plan::Walk { to, speed } => move_towards(pos, *to, *speed * dt),
                    Plan::Board { car } => match car_poses.get(car) {
                        Some(cp) => move_towards(pos, (cp.position.x, cp.position.y), ent.max_speed * dt),
                        None => (pos, false),
                    },
                    Plan::Route { waypoints, next, speed } => {
                        let mut budget = *speed * dt;
                        let mut cur = pos;
                        let mut finished = false;
                        while budget > 0.0 {
                            let target = waypoints[*next];
                            let dist = cur.horizontal_distance(Vec3::new(target.0, target.1, cur.z));
                            let (np, reached) = move_towards(cur, target, budget);
                            budget -= dist.min(budget);
                            cur = np;
                            if reached {
                                if *next + 1 < waypoints.len() {
                                    *next += 1;
                                } else {
                                    finished = true;
                                    break;
                                }
                            } else {
                                break;
                            }
                        }
                        (cur, finished)
                    }
                };
                let d = new_pos - pos;
                ent.velocity = d.scale(1.0 / dt);
                if d.horizontal_norm() > 1e-9 {
                    ent.pose.yaw = d.y.atan2(d.x);
                }
                ent.pose.position = new_pos;
                if done {
                    match std::mem::replace(&mut ent.plan, Plan::Still) {
                        Plan::Board { car } => {
                            ent.carried_by = Some(car.clone());
                            events.push(WorldEvent {
                                time: time + dt,
                                kind: WorldEventKind::Entered,
                                subject: id.clone(),
                                other: Some(car),
                            });
                        }
                        _ => events.push(WorldEvent {
                            time: time + dt,
                            kind: WorldEventKind::Arrived,
                            subject: id.clone(),
                            other: None,
                        }),
                    }
                    ent.velocity = Vec3::ZERO;
                }
            }
            EntityKind::BaseStation | EntityKind::Obstacle => {}
        }
    }

    // Carried entities ride with their carrier.
    let carriers: Vec<(EntityId, EntityId)> = state
        .entities
        .iter()
        .filter_map(|(id, e)| e.carried_by.clone().map(|c| (id.clone(), c)))
        .collect();
    for (id, carrier) in carriers {
        if let Some(c) = state.entities.get(&carrier).map(|c| (c.pose, c.velocity)) {
            let ent = state.entities.get_mut(&id).expect("carried id exists");
            ent.pose = c.0;
            ent.velocity = c.1;
        }
    }

    state.time = time + dt;

    // Collisions are logged on contact onset.
    let mut contacts = BTreeSet::new();
    for (i, a) in ids.iter().enumerate() {
        let ea = &state.entities[a];
        if ea.kind != EntityKind::Drone {
            continue;
        }
        for b in ids.iter().skip(i + 1).chain(ids.iter().take(i)) {
            let eb = &state.entities[b];
            let radius = match eb.kind {
                EntityKind::Drone if a < b => dynamics.drone_collision_radius,
                EntityKind::Obstacle => dynamics.obstacle_collision_radius,
                _ => continue,
            };
            let dist = ea.pose.position.distance(eb.pose.position);
            if dist < radius {
                let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                if !state.in_contact.contains(&key) {
                    state.collision_log.push(CollisionRecord {
                        time: state.time,
                        a: key.0.clone(),
                        b: key.1.clone(),
                        distance: dist,
                    });
                }
                contacts.insert(key);
            }
        }
    }
    state.in_contact = contacts;

    // Trigger-bound actions fire at the start of the next step.
    for ev in &events {
        let trig = match ev.kind {
            WorldEventKind::Arrived => WorldTrigger::Arrived,
            WorldEventKind::Entered => WorldTrigger::Entered,
            WorldEventKind::Exited => WorldTrigger::Exited,
        };
        let involved = |id: &EntityId| *id == ev.subject || ev.other.as_ref() == Some(id);
        let mut i = 0;
        while i < state.pending_triggers.len() {
            let act = &state.pending_triggers[i];
            if act.when == ScriptWhen::On(trig) && involved(&act.entity) {
                let act = state.pending_triggers.remove(i);
                state.fired.push(act);
            } else {
                i += 1;
            }
        }
    }
    state.last_events.extend(events);
    Ok(state)
}

/// Range, bearing and elevation of `target` as seen from drone `observer`.
/// Bearing is counter-clockwise from the observer's heading, in `(-pi, pi]`.
pub fn ground_truth_relative(state: &WorldState, observer: &DroneId, target: &EntityId) -> Result<(f64, f64, f64), WorldError> {
    let obs = state.entities.get(observer).ok_or_else(|| WorldError::UnknownEntity(observer.clone()))?;
    if obs.kind != EntityKind::Drone {
        return Err(WorldError::NotADrone(observer.clone()));
    }
    let tgt = state.entities.get(target).ok_or_else(|| WorldError::UnknownEntity(target.clone()))?;
    Ok(relative(&obs.pose, tgt.pose.position))
}

pub(crate) fn relative(from: &Pose, to: Vec3) -> (f64, f64, f64) {
    let d = to - from.position;
    let range = d.norm();
    let bearing = wrap_angle(d.y.atan2(d.x) - from.yaw);
    let elevation = d.z.atan2(d.horizontal_norm());
    (range, bearing, elevation)
}
