use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{Extent, GpsPoint, Pose, Vec3};
use crate::ids::{DroneId, EntityId, SwarmId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub world_extent: Extent,
    pub timestep: f64,
    pub duration_limit: f64,
    pub rng_seed: u64,
    pub wind: WindSpec,
    /// Azimuth of the light source; observers on the opposite side of a car
    /// see its dark side.
    pub sun_azimuth: Option<f64>,
    pub entities: Vec<EntitySpec>,
    pub swarms: Vec<SwarmSpec>,
    pub script: Vec<ScriptedAction>,
    pub network_params: NetworkSpec,
    pub mission: MissionSpec,
}

impl ScenarioSpec {
    pub fn entity(&self, id: &EntityId) -> Option<&EntitySpec> {
        self.entities.iter().find(|e| &e.id == id)
    }

    pub fn swarm(&self, id: &SwarmId) -> Option<&SwarmSpec> {
        self.swarms.iter().find(|s| &s.id == id)
    }

    pub fn swarm_of(&self, drone: &DroneId) -> Option<&SwarmSpec> {
        self.swarms.iter().find(|s| s.drone_ids.contains(drone))
    }

    pub fn drones(&self) -> impl Iterator<Item = &EntitySpec> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Drone)
    }

    pub fn base_station(&self) -> Option<&EntitySpec> {
        self.entities.iter().find(|e| e.kind == EntityKind::BaseStation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindSpec {
    pub mean: (f64, f64),
    pub gust_amplitude: f64,
    pub gust_period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Person,
    Car,
    Drone,
    BaseStation,
    Obstacle,
}

impl EntityKind {
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Person => "Person",
            EntityKind::Car => "Car",
            EntityKind::Drone => "Drone",
            EntityKind::BaseStation => "BaseStation",
            EntityKind::Obstacle => "Obstacle",
        }
    }
}

impl FromStr for EntityKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "Person" => EntityKind::Person,
            "Car" => EntityKind::Car,
            "Drone" => EntityKind::Drone,
            "BaseStation" => EntityKind::BaseStation,
            "Obstacle" => EntityKind::Obstacle,
            other => return Err(format!("unknown entity kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub id: EntityId,
    pub kind: EntityKind,
    pub spawn_pose: Pose,
    pub max_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SwarmRole {
    SearchFollow,
    TrackVehicle,
    HandoffFollow,
}

impl SwarmRole {
    pub fn name(self) -> &'static str {
        match self {
            SwarmRole::SearchFollow => "SearchFollow",
            SwarmRole::TrackVehicle => "TrackVehicle",
            SwarmRole::HandoffFollow => "HandoffFollow",
        }
    }
}

impl FromStr for SwarmRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "SearchFollow" => SwarmRole::SearchFollow,
            "TrackVehicle" => SwarmRole::TrackVehicle,
            "HandoffFollow" => SwarmRole::HandoffFollow,
            other => return Err(format!("unknown swarm role `{other}`")),
        })
    }
}

/// Multi-entity event patterns that carry strategic meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehaviorKind {
    PersonEnteredCar,
    PersonExitedCar,
}

impl BehaviorKind {
    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::PersonEnteredCar => "PersonEnteredCar",
            BehaviorKind::PersonExitedCar => "PersonExitedCar",
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "PersonEnteredCar" => Ok(BehaviorKind::PersonEnteredCar),
            "PersonExitedCar" => Ok(BehaviorKind::PersonExitedCar),
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    AtStart,
    OnStrategicEvent(BehaviorKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmSpec {
    pub id: SwarmId,
    pub drone_ids: Vec<DroneId>,
    pub role: SwarmRole,
    pub waypoints: Vec<GpsPoint>,
    pub activation: Activation,
    /// Per-swarm overrides of mission-level operational parameters.
    pub d0: Option<f64>,
    pub r0: Option<f64>,
    pub center_threshold: Option<f64>,
    pub follow_speed_cap: Option<f64>,
}

/// Ground-truth events that can trigger scripted actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorldTrigger {
    /// The acting entity finished its current walk or route.
    Arrived,
    /// A person boarded a car.
    Entered,
    /// A person left a car.
    Exited,
}

impl WorldTrigger {
    pub fn name(self) -> &'static str {
        match self {
            WorldTrigger::Arrived => "Arrived",
            WorldTrigger::Entered => "Entered",
            WorldTrigger::Exited => "Exited",
        }
    }
}

impl FromStr for WorldTrigger {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Arrived" => Ok(WorldTrigger::Arrived),
            "Entered" => Ok(WorldTrigger::Entered),
            "Exited" => Ok(WorldTrigger::Exited),
            other => Err(format!("unknown trigger `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScriptWhen {
    At(f64),
    On(WorldTrigger),
}

/// Target of an operator command.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandTarget {
    Drone(DroneId),
    Swarm(SwarmId),
    Team,
}

impl fmt::Display for CommandTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandTarget::Drone(d) => write!(f, "{d}"),
            CommandTarget::Swarm(s) => write!(f, "{s}"),
            CommandTarget::Team => f.write_str("team"),
        }
    }
}

/// Commands an operator may issue from the ground control station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorCommand {
    Arm(CommandTarget),
    Land(CommandTarget),
    Rtb(CommandTarget),
    Goto(DroneId, GpsPoint),
    MissionEnd,
}

impl OperatorCommand {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorCommand::Arm(_) => "ARM",
            OperatorCommand::Land(_) => "LAND",
            OperatorCommand::Rtb(_) => "RTB",
            OperatorCommand::Goto(..) => "GOTO",
            OperatorCommand::MissionEnd => "MissionEnd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScriptAction {
    WalkTo { to: (f64, f64), speed: f64 },
    EnterCar { car: EntityId },
    DriveRoute { waypoints: Vec<(f64, f64)>, speed: f64 },
    StopCar,
    ExitCar,
    Idle,
    /// Operator command issued by the base station at the scripted time.
    Operator(OperatorCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAction {
    pub when: ScriptWhen,
    pub entity: EntityId,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub comm_range: f64,
    pub loss_base: f64,
    pub loss_range_exponent: f64,
    pub bandwidth: u32,
    pub latency: u32,
    pub relay_enabled: bool,
    pub gcs_range: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            comm_range: 250.0,
            loss_base: 0.0,
            loss_range_exponent: 2.0,
            bandwidth: 1024,
            latency: 1,
            relay_enabled: true,
            gcs_range: 2500.0,
        }
    }
}

macro_rules! mission_fields {
    ($($field:ident : $default:expr),* $(,)?) => {
        /// Mission-level parameters. Every field is optional in the file; the
        /// accessor of the same name resolves the default.
        #[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
        pub struct MissionSpec {
            $(pub $field: Option<f64>,)*
        }

        impl MissionSpec {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            $(
                pub fn $field(&self) -> f64 {
                    self.$field.unwrap_or($default)
                }
            )*

            pub(crate) fn slot_mut(&mut self, key: &str) -> Option<&mut Option<f64>> {
                match key {
                    $(stringify!($field) => Some(&mut self.$field),)*
                    _ => None,
                }
            }

            pub(crate) fn entries(&self) -> Vec<(&'static str, f64)> {
                let mut out = Vec::new();
                $(if let Some(v) = self.$field { out.push((stringify!($field), v)); })*
                out
            }
        }
    };
}

mission_fields! {
    altitude: 10.0,
    d0: 8.0,
    r0: 5.0,
    center_threshold: 0.1,
    distance_deadband: 1.0,
    yaw_gain: 1.5,
    approach_speed: 3.0,
    follow_speed_cap: 5.0,
    follow_duration: 60.0,
    cruise_speed: 6.0,
    arrival_radius: 3.0,
    formation_radius: 8.0,
    endurance: 600.0,
    return_margin: 60.0,
    lost_timeout: 2.0,
    min_sep: 5.0,
    repulse_gain: 3.0,
    proximity_eps: 3.0,
    confirm_window: 2.0,
    stop_speed: 0.3,
    dedup_window: 5.0,
    perception_rate: 5.0,
    telemetry_rate: 10.0,
    rgb_fov: std::f64::consts::FRAC_PI_2,
    rgb_max_range: 60.0,
    depth_max_range: 80.0,
    radar_max_range: 60.0,
    radar_range_sigma: 0.0,
    detect_prob_base: 0.95,
    dark_side_penalty: 0.5,
}

impl MissionSpec {
    /// R0 as written in the file, without the default.
    pub fn r0_explicit(&self) -> Option<f64> {
        self.r0
    }
}

pub(crate) fn fmt_point(p: Vec3) -> String {
    format!("{},{},{}", p.x, p.y, p.z)
}
