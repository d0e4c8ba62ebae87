//! Multi-layer policy: per-drone operational state machine, complex-behavior
//! detection, tactical swarm coordination and the strategic team table.

mod behavior;
mod operational;
mod strategic;
mod tactical;

use std::collections::BTreeSet;
use std::fmt;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::Setpoint;
use crate::geometry::{GpsPoint, Vec3};
use crate::ids::{DroneId, SwarmId};
use crate::network::{Command, Priority, Recipients};
use crate::perception::{TargetClass, TargetLock};
use crate::scenario::{BehaviorKind, PolicyBundle, SwarmRole, Task};

pub use behavior::{detect_complex_behavior, BehaviorDetectorState, ComplexBehaviorEvent};
pub use operational::{step_operational, StepContext};
pub use strategic::{step_strategic, StrategicInput, SwarmStatus, TeamState};
pub use tactical::{step_tactical, TacticalOutput, TacticalState};

bitflags! {
    /// Set of concurrently active operational states. The empty set is a
    /// drone hovering in place with nothing to do.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
    pub struct OperationalState: u16 {
        const IDLE_SLEEPING = 1 << 0;
        const TAKEOFF = 1 << 1;
        const LANDING = 1 << 2;
        const SEARCHING = 1 << 3;
        const FOLLOWING = 1 << 4;
        const TRACKING = 1 << 5;
        const NAVIGATING_TO_GPS = 1 << 6;
        const RETURNING_TO_BASE = 1 << 7;
    }
}

const STATE_NAMES: [(OperationalState, &str); 8] = [
    (OperationalState::IDLE_SLEEPING, "IdleSleeping"),
    (OperationalState::TAKEOFF, "Takeoff"),
    (OperationalState::LANDING, "Landing"),
    (OperationalState::SEARCHING, "Searching"),
    (OperationalState::FOLLOWING, "Following"),
    (OperationalState::TRACKING, "Tracking"),
    (OperationalState::NAVIGATING_TO_GPS, "NavigatingToGPS"),
    (OperationalState::RETURNING_TO_BASE, "ReturningToBase"),
];

impl OperationalState {
    /// Perception-driven modes; at most one may be active.
    pub const TASK_MODES: Self =
        Self::from_bits_truncate(Self::SEARCHING.bits() | Self::FOLLOWING.bits() | Self::TRACKING.bits());

    pub fn names(self) -> Vec<&'static str> {
        STATE_NAMES.iter().filter(|(s, _)| self.contains(*s)).map(|(_, n)| *n).collect()
    }

    pub fn from_names(names: &str) -> Option<Self> {
        if names == "Hover" {
            return Some(Self::empty());
        }
        names.split('+').try_fold(Self::empty(), |acc, n| {
            STATE_NAMES.iter().find(|(_, name)| *name == n).map(|(s, _)| acc | *s)
        })
    }

    /// Checks the set invariants.
    pub fn is_valid(self) -> bool {
        !self.contains(Self::TAKEOFF | Self::LANDING)
            && (!self.contains(Self::IDLE_SLEEPING) || self == Self::IDLE_SLEEPING)
            && (self & Self::TASK_MODES).bits().count_ones() <= 1
    }
}

impl fmt::Display for OperationalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("Hover")
        } else {
            f.write_str(&self.names().join("+"))
        }
    }
}

/// Events a drone reports to its own tactical layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SwarmEvent {
    TargetFound { class: TargetClass, location: GpsPoint },
    TargetLost { class: TargetClass },
    Behavior(ComplexBehaviorEvent),
    /// The drone finished its assigned task and is returning.
    TaskComplete,
}

impl SwarmEvent {
    pub fn key(&self) -> &'static str {
        match self {
            SwarmEvent::TargetFound { .. } => "TargetFound",
            SwarmEvent::TargetLost { .. } => "TargetLost",
            SwarmEvent::Behavior(ev) => ev.kind.name(),
            SwarmEvent::TaskComplete => "TaskComplete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrivalPurpose {
    Goto,
    SearchWaypoint(usize),
    Home,
}

/// Lock changes worth logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LockChange {
    Acquired { class: TargetClass, target: String },
    Lost { class: TargetClass },
}

/// Everything a drone's operational step produces besides its setpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Output {
    Send { priority: Priority, recipients: Recipients, command: Command },
    Event(SwarmEvent),
    Arrived { purpose: ArrivalPurpose, point: GpsPoint },
    Lock(LockChange),
    /// Radar range sample while following, for scoring.
    FollowSample { range: f64, r0: f64, cx: f64 },
    /// A command that could not be executed.
    Rejected { command: Command, reason: String },
}

/// A message handed to the network on behalf of `sender`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outbound {
    pub sender: DroneId,
    pub priority: Priority,
    pub recipients: Recipients,
    pub command: Command,
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("event from unknown swarm (reporter `{0}`)")]
    UnknownSwarm(DroneId),
    #[error("command references an unknown waypoint")]
    UnknownWaypoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DronePolicyState {
    pub id: DroneId,
    pub op: OperationalState,
    pub bundle: PolicyBundle,
    pub lock: TargetLock,
    pub waypoint_progress: usize,
    pub endurance_remaining: f64,
    pub home: GpsPoint,
    pub pending_outbox: Vec<Output>,
    pub detector: BehaviorDetectorState,
    /// Navigation goal, also remembered while still on the ground.
    pub nav_goal: Option<GpsPoint>,
    /// What to do once the current goal is reached.
    pub task: Option<Task>,
    /// Distinct peers that asked this drone to land.
    pub land_votes: BTreeSet<DroneId>,
    pub land_echoed: bool,
    /// Set once the drone has been sent home; it accepts no new tasks.
    pub retired: bool,
    pub follow_started: Option<f64>,
    /// Position held while hovering or tracking.
    pub station: Option<GpsPoint>,
    /// Injected fault: takeoff commands are ignored.
    pub no_takeoff: bool,
    pub last_setpoint: Setpoint,
}

impl DronePolicyState {
    pub fn new(id: DroneId, bundle: PolicyBundle, home: GpsPoint) -> Self {
        let mut ps = Self {
            detector: BehaviorDetectorState::new(
                id.clone(),
                bundle.operational.proximity_eps,
                bundle.operational.confirm_window,
                bundle.operational.stop_speed,
            ),
            id,
            op: OperationalState::IDLE_SLEEPING,
            lock: TargetLock::default(),
            waypoint_progress: bundle.operational.initial_progress,
            endurance_remaining: bundle.operational.endurance,
            home: Vec3::new(home.x, home.y, 0.0),
            pending_outbox: Vec::new(),
            nav_goal: None,
            task: bundle.operational.initial_task,
            land_votes: BTreeSet::new(),
            land_echoed: false,
            retired: false,
            follow_started: None,
            station: None,
            no_takeoff: false,
            last_setpoint: Setpoint::hold(),
            bundle,
        };
        if ps.bundle.operational.start_active {
            ps.op = OperationalState::TAKEOFF;
            ps.nav_goal = ps.bundle.operational.predefined_waypoint;
        }
        ps
    }

    pub fn swarm(&self) -> &SwarmId {
        &self.bundle.tactical.swarm
    }

    pub fn role(&self) -> SwarmRole {
        self.bundle.tactical.role
    }

    /// Class this drone looks for while searching or following.
    pub fn wanted_class(&self) -> TargetClass {
        match self.task {
            Some(Task::Track(c)) | Some(Task::Follow(c)) => c,
            None => TargetClass::Person,
        }
    }

    pub fn reports(&self, kind: BehaviorKind) -> bool {
        self.bundle.tactical.report_events.contains(&kind)
    }
}
