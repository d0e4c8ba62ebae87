use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{DroneId, SwarmId};
use crate::network::{Command, Priority, Recipients, GCS};
use crate::scenario::{GotoSource, StrategicAction, StrategicTable, StrategicTrigger, Task};

use super::{ComplexBehaviorEvent, Outbound, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwarmStatus {
    Dormant,
    Active,
    Recalled,
}

/// Team-wide mission status, owned by the strategic layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TeamState {
    pub swarms: BTreeMap<SwarmId, SwarmStatus>,
    /// Triggers already acted upon; each fires at most once per mission.
    pub fired: BTreeSet<StrategicTrigger>,
    pub mission_over: bool,
}

impl TeamState {
    pub fn new(statuses: impl IntoIterator<Item = (SwarmId, SwarmStatus)>) -> Self {
        Self { swarms: statuses.into_iter().collect(), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StrategicInput {
    Behavior(ComplexBehaviorEvent),
    TaskComplete { reporter: DroneId },
    OperatorMissionEnd,
}

/// Maps one strategic event to team commands. Pure: the same team state and
/// event always give the same messages.
pub fn step_strategic(team: &TeamState, table: &StrategicTable, input: &StrategicInput) -> Result<(TeamState, Vec<Outbound>), PolicyError> {
    let (trigger, sender) = match input {
        StrategicInput::Behavior(ev) => {
            table.swarm_of(&ev.reporter).ok_or_else(|| PolicyError::UnknownSwarm(ev.reporter.clone()))?;
            (StrategicTrigger::Behavior(ev.kind), ev.reporter.clone())
        }
        StrategicInput::TaskComplete { reporter } => {
            let swarm = table.swarm_of(reporter).ok_or_else(|| PolicyError::UnknownSwarm(reporter.clone()))?;
            (StrategicTrigger::TaskComplete(table.roles[swarm]), reporter.clone())
        }
        StrategicInput::OperatorMissionEnd => (StrategicTrigger::OperatorMissionEnd, DroneId::from(GCS)),
    };
    let mut next = team.clone();
    if !next.fired.insert(trigger) {
        return Ok((next, Vec::new()));
    }
    let send = |recipients, command| Outbound { sender: sender.clone(), priority: Priority::Strategic, recipients, command };
    let mut out = Vec::new();
    for action in table.actions(trigger) {
        match action {
            StrategicAction::Land(s) => {
                out.push(send(Recipients::Swarm(s.clone()), Command::Land));
                next.swarms.insert(s.clone(), SwarmStatus::Recalled);
            }
            StrategicAction::Activate { swarm, goto, task } => {
                if next.swarms.get(swarm) != Some(&SwarmStatus::Dormant) {
                    continue;
                }
                let point = match (goto, input) {
                    (GotoSource::Predefined, _) => None,
                    (GotoSource::Reporter, StrategicInput::Behavior(ev)) => Some(ev.reporter_position),
                    (GotoSource::Reporter, _) => None,
                };
                let to = || Recipients::Swarm(swarm.clone());
                out.push(send(to(), Command::Arm));
                out.push(send(to(), Command::Goto(point)));
                out.push(send(
                    to(),
                    match task {
                        Task::Track(c) => Command::Track(*c),
                        Task::Follow(c) => Command::Follow(*c),
                    },
                ));
                next.swarms.insert(swarm.clone(), SwarmStatus::Active);
            }
            StrategicAction::MissionEnd => {
                out.push(send(Recipients::Team, Command::MissionEnd));
                next.mission_over = true;
            }
            StrategicAction::LandAll => {
                out.push(send(Recipients::Team, Command::Land));
                next.mission_over = true;
            }
        }
    }
    Ok((next, out))
}
