use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::DroneId;
use crate::network::{Command, Priority, Recipients};
use crate::scenario::TacticalRules;

use super::{DronePolicyState, OperationalState as S, Outbound, StrategicInput, SwarmEvent};

/// Coordination state of one swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacticalState {
    pub rules: TacticalRules,
    /// Last time each event kind was acted upon, for deduplication.
    pub last_handled: BTreeMap<String, f64>,
    /// The swarm's terminal condition has fired.
    pub terminated: bool,
}

impl TacticalState {
    pub fn new(rules: TacticalRules) -> Self {
        Self { rules, last_handled: BTreeMap::new(), terminated: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TacticalOutput {
    pub messages: Vec<Outbound>,
    /// Events forwarded to the strategic layer, deduplicated.
    pub strategic: Vec<StrategicInput>,
}

/// Handles the events members raised this step.
///
/// Events of the same kind within `dedup_window` of the last handled one are
/// dropped. A found target pulls idle searchers to its location; the
/// terminal behavior lands the whole swarm; complex behaviors and task
/// completion go up to the strategic layer.
pub fn step_tactical(ts: &mut TacticalState, group: &[&DronePolicyState], events: &[(DroneId, SwarmEvent)], time: f64) -> TacticalOutput {
    let mut out = TacticalOutput::default();
    for (reporter, ev) in events {
        let key = ev.key().to_owned();
        if let Some(&last) = ts.last_handled.get(&key) {
            if time - last < ts.rules.dedup_window {
                continue;
            }
        }
        ts.last_handled.insert(key, time);
        match ev {
            SwarmEvent::TargetFound { location, .. } => {
                if !ts.rules.share_target_found || ts.terminated {
                    continue;
                }
                for m in group {
                    if &m.id != reporter && m.op.contains(S::SEARCHING) && !m.op.contains(S::NAVIGATING_TO_GPS) {
                        out.messages.push(Outbound {
                            sender: reporter.clone(),
                            priority: Priority::Tactical,
                            recipients: Recipients::Drone(m.id.clone()),
                            command: Command::Goto(Some(*location)),
                        });
                    }
                }
            }
            SwarmEvent::TargetLost { .. } => {}
            SwarmEvent::Behavior(b) => {
                if ts.rules.terminal_event == Some(b.kind) && !ts.terminated {
                    ts.terminated = true;
                    out.messages.push(Outbound {
                        sender: reporter.clone(),
                        priority: Priority::Tactical,
                        recipients: Recipients::Swarm(ts.rules.swarm.clone()),
                        command: Command::Land,
                    });
                }
                out.strategic.push(StrategicInput::Behavior(b.clone()));
            }
            SwarmEvent::TaskComplete => out.strategic.push(StrategicInput::TaskComplete { reporter: reporter.clone() }),
        }
    }
    out
}
