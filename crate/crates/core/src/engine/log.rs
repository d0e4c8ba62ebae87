//! Canonical line-delimited event log.
//!
//! A log file starts with `#` header lines that embed the scenario, followed
//! by one record per line:
//!
//! ```text
//! t=12.35 kind=StateTransition subject=d3 detail=from=Searching to=Following
//! ```
//!
//! The last record of a complete run is a `MissionPhase` record whose detail
//! starts with `run-end`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &str = "# swarmsim event log v1";
const SCENARIO_PREFIX: &str = "# scenario ";
pub const RUN_END: &str = "run-end";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    StateTransition,
    ObservationSummary,
    MessageSent,
    MessageDelivered,
    MessageDropped,
    ComplexBehavior,
    Collision,
    Arrival,
    MissionPhase,
    /// Periodic pose snapshot used to rebuild telemetry from a log.
    Snapshot,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::StateTransition,
        EventKind::ObservationSummary,
        EventKind::MessageSent,
        EventKind::MessageDelivered,
        EventKind::MessageDropped,
        EventKind::ComplexBehavior,
        EventKind::Collision,
        EventKind::Arrival,
        EventKind::MissionPhase,
        EventKind::Snapshot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::StateTransition => "StateTransition",
            EventKind::ObservationSummary => "ObservationSummary",
            EventKind::MessageSent => "MessageSent",
            EventKind::MessageDelivered => "MessageDelivered",
            EventKind::MessageDropped => "MessageDropped",
            EventKind::ComplexBehavior => "ComplexBehavior",
            EventKind::Collision => "Collision",
            EventKind::Arrival => "Arrival",
            EventKind::MissionPhase => "MissionPhase",
            EventKind::Snapshot => "Snapshot",
        }
    }
}

impl FromStr for EventKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        EventKind::ALL.into_iter().find(|k| k.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub subject: String,
    pub detail: String,
}

impl EventRecord {
    pub fn new(time: f64, kind: EventKind, subject: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { time, kind, subject: subject.into(), detail: detail.into() }
    }

    /// Value of `key=` inside the detail, up to the next space.
    pub fn field(&self, key: &str) -> Option<&str> {
        detail_field(&self.detail, key)
    }
}

pub fn detail_field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail.split(' ').find_map(|tok| tok.strip_prefix(key)?.strip_prefix('='))
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.2} kind={} subject={} detail={}", self.time, self.kind.name(), self.subject, self.detail)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LogError {
    #[error("line {0}: malformed record")]
    Malformed(usize),
    #[error("not an event log (missing header)")]
    MissingHeader,
    #[error("truncated log: no run-end record")]
    Truncated,
}

impl FromStr for EventRecord {
    type Err = ();

    fn from_str(line: &str) -> Result<Self, ()> {
        let rest = line.strip_prefix("t=").ok_or(())?;
        let (t, rest) = rest.split_once(" kind=").ok_or(())?;
        let (kind, rest) = rest.split_once(" subject=").ok_or(())?;
        let (subject, detail) = rest.split_once(" detail=").ok_or(())?;
        Ok(Self { time: t.parse().map_err(|_| ())?, kind: kind.parse()?, subject: subject.to_owned(), detail: detail.to_owned() })
    }
}

/// A run's records plus the scenario they came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub scenario: String,
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.records.len() * 80);
        s.push_str(MAGIC);
        s.push('\n');
        for line in self.scenario.lines() {
            s.push_str(SCENARIO_PREFIX);
            s.push_str(line);
            s.push('\n');
        }
        for r in &self.records {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }

    /// Parses a complete log; a log without its `run-end` record is rejected.
    pub fn parse(text: &str) -> Result<Self, LogError> {
        let log = Self::parse_partial(text)?;
        if !log.is_complete() {
            return Err(LogError::Truncated);
        }
        Ok(log)
    }

    /// Parses whatever records are present.
    pub fn parse_partial(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(LogError::MissingHeader),
        }
        let mut log = EventLog::default();
        for (i, line) in lines {
            if let Some(s) = line.strip_prefix(SCENARIO_PREFIX) {
                log.scenario.push_str(s);
                log.scenario.push('\n');
            } else if line.starts_with('#') || line.is_empty() {
                continue;
            } else {
                log.records.push(line.parse().map_err(|_| LogError::Malformed(i + 1))?);
            }
        }
        Ok(log)
    }

    pub fn is_complete(&self) -> bool {
        self.records
            .last()
            .is_some_and(|r| r.kind == EventKind::MissionPhase && r.detail.starts_with(RUN_END))
    }

    /// Sim time of the final record.
    pub fn duration(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.time)
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}
