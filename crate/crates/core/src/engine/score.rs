//! Desired-vs-actual task tallies computed purely from the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::SwarmId;
use crate::scenario::{ScenarioSpec, SwarmRole};

use super::{EventKind, EventRecord, Phase, RUN_END};

/// |R − R0| tolerance for "constant distance" following.
pub const FOLLOW_TOLERANCE: f64 = 1.5;
/// Share of follow samples that must be within tolerance.
pub const FOLLOW_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Complete,
    Partial,
    Failed,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Complete => "Complete",
            Outcome::Partial => "Partial",
            Outcome::Failed => "Failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTally {
    pub task: String,
    pub desired: u32,
    pub actual: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub t: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub per_swarm: BTreeMap<SwarmId, Vec<TaskTally>>,
    pub timeline: Vec<PhaseMark>,
    pub outcome: Outcome,
}

impl MissionReport {
    pub fn task(&self, swarm: &str, task: &str) -> Option<&TaskTally> {
        self.per_swarm.get(&SwarmId::from(swarm))?.iter().find(|t| t.task == task)
    }

    pub fn all_met(&self) -> bool {
        self.per_swarm.values().flatten().all(|t| t.actual == t.desired)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Records of one drone, in log order.
fn of<'a>(log: &'a [EventRecord], drone: &'a str) -> impl Iterator<Item = &'a EventRecord> + 'a {
    log.iter().filter(move |r| r.subject == drone)
}

fn acquired(log: &[EventRecord], drone: &str, class: &str) -> Option<f64> {
    of(log, drone)
        .find(|r| r.kind == EventKind::ObservationSummary && r.field("lock") == Some("acquired") && r.field("class") == Some(class))
        .map(|r| r.time)
}

fn arrived(log: &[EventRecord], drone: &str, purpose: &str) -> Option<f64> {
    of(log, drone).find(|r| r.kind == EventKind::Arrival && r.field("purpose") == Some(purpose)).map(|r| r.time)
}

fn took_off(log: &[EventRecord], drone: &str) -> bool {
    of(log, drone).any(|r| r.kind == EventKind::StateTransition && r.field("to") == Some("Takeoff"))
}

/// Came home and then switched off.
fn landed_at_base(log: &[EventRecord], drone: &str) -> bool {
    arrived(log, drone, "home").is_some_and(|t| {
        of(log, drone).any(|r| r.time >= t && r.kind == EventKind::StateTransition && r.field("to") == Some("IdleSleeping"))
    })
}

fn phase_time(log: &[EventRecord], phase: Phase) -> Option<f64> {
    log.iter()
        .find(|r| r.kind == EventKind::MissionPhase && r.field("phase") == Some(phase.name()))
        .map(|r| r.time)
}

fn follow_within_tolerance(log: &[EventRecord], drone: &str) -> bool {
    let errs: Vec<f64> = of(log, drone)
        .filter(|r| r.kind == EventKind::ObservationSummary && r.detail.starts_with("sample "))
        .filter_map(|r| Some((r.field("range")?.parse::<f64>().ok()? - r.field("r0")?.parse::<f64>().ok()?).abs()))
        .collect();
    // Settling from the approach distance is not held against the drone.
    let Some(start) = errs.iter().position(|e| *e <= FOLLOW_TOLERANCE) else { return false };
    let tail = &errs[start..];
    let ok = tail.iter().filter(|e| **e <= FOLLOW_TOLERANCE).count();
    ok as f64 >= FOLLOW_FRACTION * tail.len() as f64
}

/// Scores a run from its log alone.
pub fn score_mission(log: &[EventRecord], spec: &ScenarioSpec) -> MissionReport {
    let confirm = spec.mission.confirm_window();
    // Once the person has boarded, losing them is expected; the boarding
    // itself happened a confirmation window before it was reported.
    let boarded = phase_time(log, Phase::PersonEnteredCar).map_or(f64::INFINITY, |t| t - confirm);

    let mut per_swarm = BTreeMap::new();
    for swarm in &spec.swarms {
        let ids: Vec<&str> = swarm.drone_ids.iter().map(|d| d.as_str()).collect();
        let n = ids.len() as u32;
        let count = |pred: &dyn Fn(&str) -> bool| ids.iter().filter(|d| pred(d)).count() as u32;
        let tally = |task: &str, desired: u32, actual: u32| TaskTally { task: task.into(), desired, actual: actual.min(desired) };
        let tasks = match swarm.role {
            SwarmRole::SearchFollow => vec![
                tally("detect person", n, count(&|d| acquired(log, d, "Person").is_some())),
                tally(
                    "follow without loss",
                    n,
                    count(&|d| {
                        acquired(log, d, "Person").is_some_and(|t0| {
                            !of(log, d).any(|r| {
                                r.kind == EventKind::ObservationSummary
                                    && matches!(r.field("lock"), Some("lost" | "swap"))
                                    && r.time >= t0
                                    && r.time < boarded
                            })
                        })
                    }),
                ),
                tally(
                    "no collision",
                    n,
                    count(&|d| {
                        took_off(log, d)
                            && !log.iter().any(|r| r.kind == EventKind::Collision && (r.subject == d || r.field("other") == Some(d)))
                    }),
                ),
                tally("land at base", n, count(&|d| landed_at_base(log, d))),
            ],
            SwarmRole::TrackVehicle => {
                let saw = ids.iter().any(|d| of(log, d).any(|r| r.kind == EventKind::ComplexBehavior));
                let relayed = log.iter().any(|r| {
                    r.kind == EventKind::MessageDelivered
                        && r.field("cmd") == Some("ARM")
                        && r.field("from").is_some_and(|f| ids.contains(&f))
                        && spec.swarm_of(&r.subject.as_str().into()).is_some_and(|s| s.id != swarm.id)
                });
                vec![
                    tally("reach GPS point", n, count(&|d| arrived(log, d, "goto").is_some())),
                    tally("track car", n, count(&|d| acquired(log, d, "Car").is_some())),
                    tally("detect complex behavior", 1, saw as u32),
                    tally("relay ARM", 1, relayed as u32),
                ]
            }
            SwarmRole::HandoffFollow => vec![
                tally(
                    "receive TAKEOFF",
                    n,
                    count(&|d| took_off(log, d)),
                ),
                tally("reach handoff GPS", n, count(&|d| arrived(log, d, "goto").is_some())),
                tally("follow at constant distance", n, count(&|d| follow_within_tolerance(log, d))),
                tally("return", n, count(&|d| landed_at_base(log, d))),
            ],
        };
        per_swarm.insert(swarm.id.clone(), tasks);
    }

    let timeline: Vec<PhaseMark> = log
        .iter()
        .filter(|r| r.kind == EventKind::MissionPhase)
        .filter_map(|r| Some(PhaseMark { t: r.time, phase: Phase::parse(r.field("phase")?)? }))
        .collect();
    let outcome = if timeline.iter().any(|m| m.phase == Phase::MissionComplete) {
        Outcome::Complete
    } else if timeline.iter().any(|m| m.phase != Phase::Search) {
        Outcome::Partial
    } else {
        Outcome::Failed
    };
    debug_assert!(log.last().map_or(true, |r| r.detail.starts_with(RUN_END) || outcome != Outcome::Complete));
    MissionReport { per_swarm, timeline, outcome }
}
