//! Distribution of the mission into per-drone layered policy bundles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::GpsPoint;
use crate::ids::{DroneId, SwarmId};
use crate::perception::TargetClass;

use super::types::*;
use super::ScenarioError;

/// What a drone does once it reaches its commanded position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Hold station and keep the target class centered by yaw alone.
    Track(TargetClass),
    /// Acquire and follow the target class.
    Follow(TargetClass),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GotoSource {
    /// Each drone's predefined waypoint from its swarm definition.
    Predefined,
    /// The reporting drone's current position.
    Reporter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategicTrigger {
    Behavior(BehaviorKind),
    /// A swarm finished its task and returned.
    TaskComplete(SwarmRole),
    OperatorMissionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StrategicAction {
    Land(SwarmId),
    LandAll,
    Activate { swarm: SwarmId, goto: GotoSource, task: Task },
    MissionEnd,
}

/// Team-wide event → command mapping; identical in every bundle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategicTable {
    pub rules: BTreeMap<StrategicTrigger, Vec<StrategicAction>>,
    /// Swarm roster, so a strategic action can address every member.
    pub rosters: BTreeMap<SwarmId, Vec<DroneId>>,
    pub roles: BTreeMap<SwarmId, SwarmRole>,
}

impl StrategicTable {
    pub fn actions(&self, trigger: StrategicTrigger) -> &[StrategicAction] {
        self.rules.get(&trigger).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Swarm a drone belongs to.
    pub fn swarm_of(&self, drone: &DroneId) -> Option<&SwarmId> {
        self.rosters.iter().find(|(_, m)| m.contains(drone)).map(|(s, _)| s)
    }
}

/// Coordination rules shared by all members of one swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacticalRules {
    pub swarm: SwarmId,
    pub role: SwarmRole,
    pub members: Vec<DroneId>,
    /// Members converge on a target a peer has found.
    pub share_target_found: bool,
    /// Complex behaviors this swarm watches for and reports.
    pub report_events: Vec<BehaviorKind>,
    /// Behavior after which the whole swarm lands.
    pub terminal_event: Option<BehaviorKind>,
    /// Distinct peer LAND confirmations needed before an autonomous landing.
    pub land_quorum: usize,
    pub dedup_window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FollowLaw {
    /// Camera centering plus depth standoff around D0.
    Camera,
    /// Radar range feedback towards R0.
    Radar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalParams {
    pub d0: f64,
    pub r0: f64,
    pub center_threshold: f64,
    pub search_pattern: Vec<GpsPoint>,
    pub follow_speed_cap: f64,
    pub initial_progress: usize,
    pub altitude: f64,
    pub distance_deadband: f64,
    pub yaw_gain: f64,
    pub approach_speed: f64,
    pub follow_law: FollowLaw,
    /// Time spent following before the drone reports completion and returns.
    pub follow_duration: Option<f64>,
    pub cruise_speed: f64,
    pub arrival_radius: f64,
    pub formation_offset: (f64, f64),
    pub predefined_waypoint: Option<GpsPoint>,
    pub endurance: f64,
    pub return_margin: f64,
    pub lost_timeout: f64,
    pub min_sep: f64,
    pub repulse_gain: f64,
    pub proximity_eps: f64,
    pub confirm_window: f64,
    pub stop_speed: f64,
    pub control_period: f64,
    pub start_active: bool,
    pub initial_task: Option<Task>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub strategic: StrategicTable,
    pub tactical: TacticalRules,
    pub operational: OperationalParams,
}

fn build_strategic(spec: &ScenarioSpec) -> StrategicTable {
    let mut table = StrategicTable::default();
    for sw in &spec.swarms {
        table.rosters.insert(sw.id.clone(), sw.drone_ids.clone());
        table.roles.insert(sw.id.clone(), sw.role);
    }
    for sw in &spec.swarms {
        if sw.role == SwarmRole::SearchFollow {
            table
                .rules
                .entry(StrategicTrigger::Behavior(BehaviorKind::PersonEnteredCar))
                .or_default()
                .push(StrategicAction::Land(sw.id.clone()));
        }
    }
    for sw in &spec.swarms {
        if let Activation::OnStrategicEvent(kind) = sw.activation {
            let (goto, task) = match sw.role {
                SwarmRole::TrackVehicle => (GotoSource::Predefined, Task::Track(TargetClass::Car)),
                SwarmRole::HandoffFollow => (GotoSource::Reporter, Task::Follow(TargetClass::Person)),
                SwarmRole::SearchFollow => (GotoSource::Reporter, Task::Follow(TargetClass::Person)),
            };
            table
                .rules
                .entry(StrategicTrigger::Behavior(kind))
                .or_default()
                .push(StrategicAction::Activate { swarm: sw.id.clone(), goto, task });
        }
    }
    table
        .rules
        .insert(StrategicTrigger::TaskComplete(SwarmRole::HandoffFollow), vec![StrategicAction::MissionEnd]);
    table.rules.insert(StrategicTrigger::OperatorMissionEnd, vec![StrategicAction::LandAll]);
    table
}

/// Compiles the scenario into one policy bundle per drone.
pub fn compile_policies(spec: &ScenarioSpec) -> Result<BTreeMap<DroneId, PolicyBundle>, ScenarioError> {
    let strategic = build_strategic(spec);
    let m = &spec.mission;
    let mut out = BTreeMap::new();
    for sw in &spec.swarms {
        let missing = |param: &str| ScenarioError::MissingParameter {
            swarm: sw.id.to_string(),
            role: sw.role.name().to_owned(),
            param: param.to_owned(),
        };
        let r0 = match (sw.role, sw.r0.or(m.r0)) {
            (SwarmRole::HandoffFollow, None) => return Err(missing("r0")),
            (_, r0) => r0.unwrap_or_else(|| m.r0()),
        };
        if sw.role == SwarmRole::SearchFollow && sw.waypoints.is_empty() {
            return Err(missing("waypoints (search pattern)"));
        }
        let n = sw.drone_ids.len();
        let tactical = TacticalRules {
            swarm: sw.id.clone(),
            role: sw.role,
            members: sw.drone_ids.clone(),
            share_target_found: sw.role != SwarmRole::TrackVehicle,
            report_events: match sw.role {
                SwarmRole::SearchFollow => vec![BehaviorKind::PersonEnteredCar],
                SwarmRole::TrackVehicle => vec![BehaviorKind::PersonExitedCar],
                SwarmRole::HandoffFollow => vec![],
            },
            terminal_event: (sw.role == SwarmRole::SearchFollow).then_some(BehaviorKind::PersonEnteredCar),
            land_quorum: 2.min(n.saturating_sub(1)).max(1),
            dedup_window: m.dedup_window(),
        };
        for (i, drone) in sw.drone_ids.iter().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let radius = if n > 1 { m.formation_radius() } else { 0.0 };
            let operational = OperationalParams {
                d0: sw.d0.unwrap_or_else(|| m.d0()),
                r0,
                center_threshold: sw.center_threshold.unwrap_or_else(|| m.center_threshold()),
                search_pattern: if sw.role == SwarmRole::SearchFollow { sw.waypoints.clone() } else { Vec::new() },
                follow_speed_cap: sw.follow_speed_cap.unwrap_or_else(|| m.follow_speed_cap()),
                initial_progress: if sw.waypoints.is_empty() { 0 } else { i * sw.waypoints.len() / n },
                altitude: m.altitude(),
                distance_deadband: m.distance_deadband(),
                yaw_gain: m.yaw_gain(),
                approach_speed: m.approach_speed(),
                follow_law: match sw.role {
                    SwarmRole::HandoffFollow => FollowLaw::Radar,
                    _ => FollowLaw::Camera,
                },
                follow_duration: (sw.role == SwarmRole::HandoffFollow).then(|| m.follow_duration()),
                cruise_speed: m.cruise_speed(),
                arrival_radius: m.arrival_radius(),
                formation_offset: (radius * angle.cos(), radius * angle.sin()),
                predefined_waypoint: match sw.role {
                    SwarmRole::TrackVehicle => Some(sw.waypoints[i % sw.waypoints.len()]),
                    _ => None,
                },
                endurance: m.endurance(),
                return_margin: m.return_margin(),
                lost_timeout: m.lost_timeout(),
                min_sep: m.min_sep(),
                repulse_gain: m.repulse_gain(),
                proximity_eps: m.proximity_eps(),
                confirm_window: m.confirm_window(),
                stop_speed: m.stop_speed(),
                control_period: 1.0 / m.perception_rate(),
                start_active: sw.activation == Activation::AtStart,
                initial_task: match sw.role {
                    SwarmRole::TrackVehicle => Some(Task::Track(TargetClass::Car)),
                    SwarmRole::HandoffFollow => Some(Task::Follow(TargetClass::Person)),
                    SwarmRole::SearchFollow => None,
                },
            };
            out.insert(
                drone.clone(),
                PolicyBundle { strategic: strategic.clone(), tactical: tactical.clone(), operational },
            );
        }
    }
    Ok(out)
}
