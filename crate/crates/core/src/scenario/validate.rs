use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::*;

/// One broken invariant: the field it concerns and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.rule)
    }
}

/// Checks every scenario invariant and returns the ones that fail.
pub fn validate_scenario(spec: &ScenarioSpec) -> Vec<Violation> {
    let mut v = Vec::new();
    if !(spec.timestep > 0.0) {
        v.push(Violation::new("timestep", "must be > 0"));
    }
    if !(spec.duration_limit > 0.0) {
        v.push(Violation::new("duration_limit", "must be > 0"));
    }
    let e = &spec.world_extent;
    if !(e.max_x > e.min_x && e.max_y > e.min_y) {
        v.push(Violation::new("world_extent", "must have positive width and height"));
    }
    if spec.wind.gust_amplitude < 0.0 {
        v.push(Violation::new("wind_gust", "amplitude must be >= 0"));
    }
    if !(spec.wind.gust_period > 0.0) {
        v.push(Violation::new("wind_gust", "period must be > 0"));
    }

    let mut ids = BTreeSet::new();
    for ent in &spec.entities {
        if !ids.insert(&ent.id) {
            v.push(Violation::new(format!("entity {}", ent.id), "id must be unique"));
        }
        if !e.contains(ent.spawn_pose.position) {
            v.push(Violation::new(format!("entity {}", ent.id), "spawn position must lie inside world_extent"));
        }
        match ent.kind {
            EntityKind::Person | EntityKind::Car if ent.spawn_pose.position.z != 0.0 => {
                v.push(Violation::new(format!("entity {}", ent.id), "ground actors must spawn at z = 0"));
            }
            EntityKind::Drone if !(ent.max_speed > 0.0) => {
                v.push(Violation::new(format!("entity {}", ent.id), "drone max_speed must be > 0"));
            }
            _ => {}
        }
    }
    let bases = spec.entities.iter().filter(|e| e.kind == EntityKind::BaseStation).count();
    if bases != 1 {
        v.push(Violation::new("entities", "exactly one BaseStation is required"));
    }

    let mut swarm_ids = BTreeSet::new();
    let mut membership: BTreeMap<&str, usize> = BTreeMap::new();
    for sw in &spec.swarms {
        let field = format!("swarm {}", sw.id);
        if !swarm_ids.insert(&sw.id) {
            v.push(Violation::new(&field, "id must be unique"));
        }
        if sw.drone_ids.is_empty() {
            v.push(Violation::new(&field, "drone_ids must be non-empty"));
        }
        if sw.role == SwarmRole::TrackVehicle && sw.waypoints.is_empty() {
            v.push(Violation::new(&field, "TrackVehicle swarms need at least one waypoint"));
        }
        for d in &sw.drone_ids {
            match spec.entity(d) {
                Some(ent) if ent.kind == EntityKind::Drone => *membership.entry(d.as_str()).or_default() += 1,
                Some(_) => v.push(Violation::new(&field, format!("member {d} is not a drone"))),
                None => v.push(Violation::new(&field, format!("unknown entity reference {d}"))),
            }
        }
        for (key, val) in [("d0", sw.d0), ("r0", sw.r0)] {
            if matches!(val, Some(x) if !(x > 0.0)) {
                v.push(Violation::new(format!("{field} {key}"), "must be > 0"));
            }
        }
        if matches!(sw.center_threshold, Some(c) if !(c > 0.0 && c < 0.5)) {
            v.push(Violation::new(format!("{field} center_threshold"), "must lie in (0, 0.5)"));
        }
    }
    for d in spec.drones() {
        match membership.get(d.id.as_str()).copied().unwrap_or(0) {
            1 => {}
            0 => v.push(Violation::new(format!("entity {}", d.id), "drone must belong to exactly one swarm")),
            _ => v.push(Violation::new(format!("entity {}", d.id), "drone belongs to more than one swarm")),
        }
    }

    for (i, act) in spec.script.iter().enumerate() {
        let field = format!("script[{i}]");
        if let ScriptWhen::At(t) = act.when {
            if !(t >= 0.0) {
                v.push(Violation::new(&field, "time must be non-negative"));
            }
        }
        let Some(actor) = spec.entity(&act.entity) else {
            v.push(Violation::new(&field, format!("unknown entity reference {}", act.entity)));
            continue;
        };
        let expected = match &act.action {
            ScriptAction::WalkTo { speed, .. } => {
                if !(*speed > 0.0) {
                    v.push(Violation::new(&field, "walk speed must be > 0"));
                }
                Some(EntityKind::Person)
            }
            ScriptAction::EnterCar { car } => {
                match spec.entity(car) {
                    Some(c) if c.kind == EntityKind::Car => {}
                    Some(_) => v.push(Violation::new(&field, format!("{car} is not a car"))),
                    None => v.push(Violation::new(&field, format!("unknown entity reference {car}"))),
                }
                Some(EntityKind::Person)
            }
            ScriptAction::ExitCar => Some(EntityKind::Person),
            ScriptAction::DriveRoute { waypoints, speed } => {
                if waypoints.is_empty() || !(*speed > 0.0) {
                    v.push(Violation::new(&field, "route needs waypoints and speed > 0"));
                }
                Some(EntityKind::Car)
            }
            ScriptAction::StopCar => Some(EntityKind::Car),
            ScriptAction::Idle => None,
            ScriptAction::Operator(cmd) => {
                let target_ok = match cmd {
                    OperatorCommand::Arm(t) | OperatorCommand::Land(t) | OperatorCommand::Rtb(t) => match t {
                        CommandTarget::Drone(d) => spec.entity(d).is_some_and(|e| e.kind == EntityKind::Drone),
                        CommandTarget::Swarm(s) => spec.swarm(s).is_some(),
                        CommandTarget::Team => true,
                    },
                    OperatorCommand::Goto(d, _) => spec.entity(d).is_some_and(|e| e.kind == EntityKind::Drone),
                    OperatorCommand::MissionEnd => true,
                };
                if !target_ok {
                    v.push(Violation::new(&field, "unknown entity reference in command target"));
                }
                Some(EntityKind::BaseStation)
            }
        };
        if let Some(kind) = expected {
            if actor.kind != kind {
                v.push(Violation::new(&field, format!("action requires a {} actor", kind.name())));
            }
        }
    }

    let n = &spec.network_params;
    if !(n.comm_range > 0.0) {
        v.push(Violation::new("network comm_range", "must be > 0"));
    }
    if !(n.loss_base >= 0.0 && n.loss_base < 1.0) {
        v.push(Violation::new("network loss_base", "must lie in [0, 1)"));
    }
    if n.latency < 1 {
        v.push(Violation::new("network latency", "must be >= 1"));
    }
    if n.bandwidth == 0 {
        v.push(Violation::new("network bandwidth", "must be > 0"));
    }
    if !(n.gcs_range > 0.0) {
        v.push(Violation::new("network gcs_range", "must be > 0"));
    }

    let m = &spec.mission;
    for (key, val) in [
        ("d0", m.d0()),
        ("r0", m.r0()),
        ("altitude", m.altitude()),
        ("perception_rate", m.perception_rate()),
        ("telemetry_rate", m.telemetry_rate()),
        ("rgb_max_range", m.rgb_max_range()),
        ("depth_max_range", m.depth_max_range()),
        ("radar_max_range", m.radar_max_range()),
        ("lost_timeout", m.lost_timeout()),
        ("arrival_radius", m.arrival_radius()),
        ("min_sep", m.min_sep()),
        ("proximity_eps", m.proximity_eps()),
        ("confirm_window", m.confirm_window()),
    ] {
        if !(val > 0.0) {
            v.push(Violation::new(format!("mission {key}"), "must be > 0"));
        }
    }
    let ct = m.center_threshold();
    if !(ct > 0.0 && ct < 0.5) {
        v.push(Violation::new("mission center_threshold", "must lie in (0, 0.5)"));
    }
    let fov = m.rgb_fov();
    if !(fov > 0.0 && fov < 2.0 * std::f64::consts::PI) {
        v.push(Violation::new("mission rgb_fov", "must lie in (0, 2pi)"));
    }
    let pb = m.detect_prob_base();
    if !(0.0..=1.0).contains(&pb) {
        v.push(Violation::new("mission detect_prob_base", "must lie in [0, 1]"));
    }
    if m.radar_range_sigma() < 0.0 {
        v.push(Violation::new("mission radar_range_sigma", "must be >= 0"));
    }
    if spec.timestep > 0.0 && m.perception_rate() > 1.0 / spec.timestep + 1e-9 {
        v.push(Violation::new("mission perception_rate", "must not exceed the physics rate"));
    }
    v
}
