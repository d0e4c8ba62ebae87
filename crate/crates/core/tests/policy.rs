use std::collections::BTreeMap;

use proptest::prelude::*;
use swarmsim::geometry::{Pose, Vec3};
use swarmsim::ids::{DroneId, EntityId, SwarmId};
use swarmsim::network::{Command, Priority, Recipients, SwarmMessage, GCS};
use swarmsim::perception::{BBox, TargetClass, TargetObservation};
use swarmsim::policy::{
    detect_complex_behavior, step_operational, step_strategic, step_tactical, BehaviorDetectorState, ComplexBehaviorEvent,
    DronePolicyState, LockChange, OperationalState as S, Output, PolicyError, StepContext, StrategicInput, SwarmEvent,
    SwarmStatus, TacticalState, TeamState,
};
use swarmsim::scenario::{compile_policies, parse_scenario, BehaviorKind, PolicyBundle};

const FOV: f64 = std::f64::consts::FRAC_PI_2;

fn bundles() -> BTreeMap<DroneId, PolicyBundle> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/demo10.scn")).unwrap();
    compile_policies(&parse_scenario(&text).unwrap()).unwrap()
}

fn drone(id: &str) -> DronePolicyState {
    let b = bundles().remove(&DroneId::new(id)).unwrap();
    DronePolicyState::new(DroneId::new(id), b, Vec3::new(0.0, 0.0, 0.0))
}

fn pose(x: f64, y: f64, z: f64) -> Pose {
    Pose { position: Vec3::new(x, y, z), yaw: 0.0 }
}

fn step(
    ps: DronePolicyState,
    obs: Option<&[TargetObservation]>,
    inbox: &[SwarmMessage],
    time: f64,
    at: Pose,
) -> (DronePolicyState, Vec<Output>) {
    let ctx = StepContext { time, dt: 0.05, pose: at, neighbors: &[], fov: FOV };
    let (ps, _, out) = step_operational(ps, obs, inbox, &ctx);
    assert!(ps.op.is_valid(), "{}", ps.op);
    (ps, out)
}

fn msg(from: &str, to: Recipients, command: Command) -> SwarmMessage {
    SwarmMessage::new(1, Priority::Strategic, EntityId::new(from), to, command, 0.0)
}

fn person(id: &str, range: f64, cx: f64) -> TargetObservation {
    TargetObservation {
        target_class: TargetClass::Person,
        confidence: 0.9,
        bbox: BBox { cx, cy: 0.5, w: 0.05, h: 0.1 },
        range,
        bearing: TargetObservation::bearing_from_cx(cx, FOV),
        geolocation: Vec3::new(40.0, 5.0, 0.0),
        stamp: 0.0,
        observed_id: EntityId::new(id),
    }
}

/// A swarm-1 drone at altitude, searching.
fn searching() -> DronePolicyState {
    let ps = drone("d1");
    assert_eq!(ps.op, S::TAKEOFF);
    let (ps, _) = step(ps, None, &[], 2.0, pose(2.0, -12.0, 10.0));
    assert_eq!(ps.op, S::SEARCHING);
    ps
}

fn following() -> DronePolicyState {
    let (ps, _) = step(searching(), Some(&[person("p1", 20.0, 0.5)]), &[], 3.0, pose(20.0, 0.0, 10.0));
    assert_eq!(ps.op, S::FOLLOWING);
    ps
}

#[test]
fn first_person_seen_while_searching_starts_following() {
    let (ps, out) = step(searching(), Some(&[person("p1", 20.0, 0.6)]), &[], 3.0, pose(20.0, 0.0, 10.0));
    assert!(ps.op.contains(S::FOLLOWING));
    assert!(!ps.op.contains(S::SEARCHING));
    assert_eq!(ps.lock.locked_id, Some(EntityId::new("p1")));
    assert!(out.contains(&Output::Lock(LockChange::Acquired { class: TargetClass::Person, target: "p1".into() })));
    assert!(out.iter().any(|o| matches!(o, Output::Event(SwarmEvent::TargetFound { class: TargetClass::Person, .. }))));
}

#[test]
fn lock_stays_on_the_first_target() {
    let ps = following();
    let (ps, _) = step(ps, Some(&[person("p2", 5.0, 0.5), person("p1", 20.0, 0.5)]), &[], 3.2, pose(20.0, 0.0, 10.0));
    assert_eq!(ps.lock.locked_id, Some(EntityId::new("p1")));
}

#[test]
fn ground_station_land_sends_a_follower_home() {
    let land = msg(GCS, Recipients::Swarm(SwarmId::new("swarm-1")), Command::Land);
    let (ps, _) = step(following(), Some(&[person("p1", 20.0, 0.5)]), &[land], 4.0, pose(20.0, 0.0, 10.0));
    assert_eq!(ps.op, S::RETURNING_TO_BASE);
}

#[test]
fn peer_land_needs_two_distinct_peers() {
    let to = || Recipients::Swarm(SwarmId::new("swarm-1"));
    let (ps, out) = step(following(), None, &[msg("d2", to(), Command::Land)], 4.0, pose(20.0, 0.0, 10.0));
    assert!(!ps.op.intersects(S::TASK_MODES));
    assert!(!ps.op.contains(S::RETURNING_TO_BASE));
    // Echoed once to the swarm.
    let echoes = out.iter().filter(|o| matches!(o, Output::Send { command: Command::Land, .. })).count();
    assert_eq!(echoes, 1);

    let (ps, out) = step(ps, None, &[msg("d2", to(), Command::Land)], 4.05, pose(20.0, 0.0, 10.0));
    assert!(!ps.op.contains(S::RETURNING_TO_BASE), "same peer twice is one vote");
    assert!(out.iter().all(|o| !matches!(o, Output::Send { .. })));

    let (ps, _) = step(ps, None, &[msg("d3", to(), Command::Land)], 4.1, pose(20.0, 0.0, 10.0));
    assert_eq!(ps.op, S::RETURNING_TO_BASE);
}

#[test]
fn arm_and_goto_take_off_then_navigate() {
    let ps = drone("d8");
    assert_eq!(ps.op, S::IDLE_SLEEPING);
    let g = Vec3::new(150.0, 100.0, 0.0);
    let inbox = [
        msg("d5", Recipients::Swarm(SwarmId::new("swarm-3")), Command::Arm),
        msg("d5", Recipients::Drone(DroneId::new("d8")), Command::Goto(Some(g))),
    ];
    let (ps, _) = step(ps, None, &inbox, 245.0, pose(-12.0, -12.0, 0.0));
    assert_eq!(ps.op, S::TAKEOFF);
    let (ps, _) = step(ps, None, &[], 247.0, pose(-12.0, -12.0, 10.0));
    assert_eq!(ps.op, S::NAVIGATING_TO_GPS);
    assert_eq!(ps.nav_goal, Some(Vec3::new(150.0, 100.0, 10.0)));
}

#[test]
fn swarm_goto_adds_the_formation_offset() {
    let ps = drone("d8");
    let (ox, oy) = ps.bundle.operational.formation_offset;
    let g = Vec3::new(150.0, 100.0, 0.0);
    let inbox = [
        msg("d5", Recipients::Swarm(SwarmId::new("swarm-3")), Command::Arm),
        msg("d5", Recipients::Swarm(SwarmId::new("swarm-3")), Command::Goto(Some(g))),
    ];
    let (ps, _) = step(ps, None, &inbox, 245.0, pose(-12.0, -12.0, 0.0));
    assert_eq!(ps.nav_goal, Some(Vec3::new(150.0 + ox, 100.0 + oy, 10.0)));
}

#[test]
fn goto_without_a_waypoint_is_rejected() {
    let ps = drone("d8");
    let inbox = [msg("gcs", Recipients::Drone(DroneId::new("d8")), Command::Goto(None))];
    let (ps, out) = step(ps, None, &inbox, 1.0, pose(-12.0, -12.0, 0.0));
    assert_eq!(ps.nav_goal, None);
    assert!(out.iter().any(|o| matches!(o, Output::Rejected { reason, .. } if reason == "unknown-waypoint")));
}

#[test]
fn tracker_goto_none_uses_its_predefined_waypoint() {
    let ps = drone("d4");
    let wp = ps.bundle.operational.predefined_waypoint.unwrap();
    let inbox = [
        msg("d1", Recipients::Swarm(SwarmId::new("swarm-2")), Command::Arm),
        msg("d1", Recipients::Swarm(SwarmId::new("swarm-2")), Command::Goto(None)),
    ];
    let (ps, _) = step(ps, None, &inbox, 150.0, pose(20.0, -40.0, 0.0));
    let goal = ps.nav_goal.unwrap();
    assert_eq!((goal.x, goal.y), (wp.x, wp.y));
}

fn tactical_for(swarm_drone: &str) -> (TacticalState, Vec<DronePolicyState>) {
    let b = bundles();
    let rules = b[&DroneId::new(swarm_drone)].tactical.clone();
    let members = rules.members.iter().map(|d| drone(d.as_str())).collect();
    (TacticalState::new(rules), members)
}

#[test]
fn target_found_pulls_searching_peers() {
    let (mut ts, mut members) = tactical_for("d1");
    for m in &mut members {
        *m = step(m.clone(), None, &[], 2.0, pose(0.0, 0.0, 10.0)).0;
    }
    let g = Vec3::new(60.0, 40.0, 0.0);
    let group: Vec<&DronePolicyState> = members.iter().collect();
    let events = [(DroneId::new("d2"), SwarmEvent::TargetFound { class: TargetClass::Person, location: g })];
    let out = step_tactical(&mut ts, &group, &events, 2.0);
    let mut to: Vec<String> = out
        .messages
        .iter()
        .map(|m| {
            assert_eq!(m.command, Command::Goto(Some(g)));
            assert_eq!(m.priority, Priority::Tactical);
            m.recipients.to_string()
        })
        .collect();
    to.sort();
    assert_eq!(to, ["d1", "d3"]);
    assert!(out.strategic.is_empty());
}

fn entered(reporter: &str, t: f64) -> ComplexBehaviorEvent {
    ComplexBehaviorEvent {
        kind: BehaviorKind::PersonEnteredCar,
        location: Vec3::new(90.0, 50.0, 0.0),
        stamp: t,
        reporter: DroneId::new(reporter),
        reporter_position: Vec3::new(80.0, 40.0, 10.0),
    }
}

#[test]
fn duplicate_behavior_reports_reach_strategy_once() {
    let (mut ts, members) = tactical_for("d1");
    let group: Vec<&DronePolicyState> = members.iter().collect();
    let events = [
        (DroneId::new("d1"), SwarmEvent::Behavior(entered("d1", 150.0))),
        (DroneId::new("d2"), SwarmEvent::Behavior(entered("d2", 150.0))),
    ];
    let out = step_tactical(&mut ts, &group, &events, 150.0);
    assert_eq!(out.strategic.len(), 1);
    let lands: Vec<_> = out.messages.iter().filter(|m| m.command == Command::Land).collect();
    assert_eq!(lands.len(), 1);
    assert_eq!(lands[0].recipients, Recipients::Swarm(SwarmId::new("swarm-1")));

    let later = [(DroneId::new("d3"), SwarmEvent::Behavior(entered("d3", 152.0)))];
    assert!(step_tactical(&mut ts, &group, &later, 152.0).strategic.is_empty());
}

#[test]
fn no_events_no_messages() {
    let (mut ts, members) = tactical_for("d4");
    let group: Vec<&DronePolicyState> = members.iter().collect();
    let out = step_tactical(&mut ts, &group, &[], 10.0);
    assert!(out.messages.is_empty() && out.strategic.is_empty());
}

fn team() -> (TeamState, swarmsim::scenario::StrategicTable) {
    let table = bundles().into_values().next().unwrap().strategic;
    let team = TeamState::new([
        (SwarmId::new("swarm-1"), SwarmStatus::Active),
        (SwarmId::new("swarm-2"), SwarmStatus::Dormant),
        (SwarmId::new("swarm-3"), SwarmStatus::Dormant),
    ]);
    (team, table)
}

fn summary(out: &[swarmsim::policy::Outbound]) -> Vec<(String, Command)> {
    out.iter().map(|m| (m.recipients.to_string(), m.command)).collect()
}

#[test]
fn person_entered_car_lands_searchers_and_activates_trackers() {
    let (team, table) = team();
    let (next, out) = step_strategic(&team, &table, &StrategicInput::Behavior(entered("d1", 150.0))).unwrap();
    assert!(out.iter().all(|m| m.priority == Priority::Strategic));
    assert_eq!(
        summary(&out),
        [
            ("swarm-1".into(), Command::Land),
            ("swarm-2".into(), Command::Arm),
            ("swarm-2".into(), Command::Goto(None)),
            ("swarm-2".into(), Command::Track(TargetClass::Car)),
        ]
    );
    assert_eq!(next.swarms[&SwarmId::new("swarm-1")], SwarmStatus::Recalled);
    assert_eq!(next.swarms[&SwarmId::new("swarm-2")], SwarmStatus::Active);
    // Each trigger fires once.
    let (_, again) = step_strategic(&next, &table, &StrategicInput::Behavior(entered("d2", 151.0))).unwrap();
    assert!(again.is_empty());
}

#[test]
fn person_exited_car_arms_followers_at_the_reporter() {
    let (team, table) = team();
    let (team, _) = step_strategic(&team, &table, &StrategicInput::Behavior(entered("d1", 150.0))).unwrap();
    let reporter_position = Vec3::new(150.0, 95.0, 10.0);
    let exited = ComplexBehaviorEvent {
        kind: BehaviorKind::PersonExitedCar,
        location: Vec3::new(150.0, 120.0, 0.0),
        stamp: 245.0,
        reporter: DroneId::new("d5"),
        reporter_position,
    };
    let (_, out) = step_strategic(&team, &table, &StrategicInput::Behavior(exited)).unwrap();
    assert_eq!(
        summary(&out),
        [
            ("swarm-3".into(), Command::Arm),
            ("swarm-3".into(), Command::Goto(Some(reporter_position))),
            ("swarm-3".into(), Command::Follow(TargetClass::Person)),
        ]
    );
    assert!(out.iter().all(|m| m.sender == DroneId::new("d5")));
}

#[test]
fn operator_mission_end_lands_everyone() {
    let (team, table) = team();
    let (next, out) = step_strategic(&team, &table, &StrategicInput::OperatorMissionEnd).unwrap();
    assert_eq!(summary(&out), [("team".into(), Command::Land)]);
    assert!(next.mission_over);
}

#[test]
fn event_from_unknown_drone_is_an_error() {
    let (team, table) = team();
    let err = step_strategic(&team, &table, &StrategicInput::Behavior(entered("d99", 1.0))).unwrap_err();
    assert_eq!(err, PolicyError::UnknownSwarm(DroneId::new("d99")));
}

#[test]
fn strategy_is_a_pure_function() {
    let (team, table) = team();
    let input = StrategicInput::Behavior(entered("d2", 150.0));
    assert_eq!(step_strategic(&team, &table, &input), step_strategic(&team, &table, &input));
}

fn any_command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::Arm),
        Just(Command::Takeoff),
        Just(Command::Land),
        Just(Command::Rtb),
        Just(Command::Goto(Some(Vec3::new(50.0, 50.0, 0.0)))),
        Just(Command::Track(TargetClass::Car)),
        Just(Command::Follow(TargetClass::Person)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    /// Whatever arrives alongside it, LAND clears every perception mode.
    #[test]
    fn land_wins_over_everything(
        before in proptest::collection::vec(any_command(), 0..4),
        after in proptest::collection::vec(any_command(), 0..4),
        sender in prop_oneof![Just("d2"), Just("gcs")],
        airborne in any::<bool>(),
        seen in any::<bool>(),
    ) {
        let to = || Recipients::Swarm(SwarmId::new("swarm-1"));
        let mut inbox: Vec<SwarmMessage> = before.into_iter().map(|c| msg(sender, to(), c)).collect();
        inbox.push(msg(sender, to(), Command::Land));
        inbox.extend(after.into_iter().map(|c| msg(sender, to(), c)));
        let start = if airborne { following() } else { drone("d1") };
        let obs = [person("p1", 15.0, 0.5)];
        let z = if airborne { 10.0 } else { 0.0 };
        let (ps, _) = step(start, seen.then_some(&obs[..]), &inbox, 5.0, pose(20.0, 0.0, z));
        prop_assert!(!ps.op.intersects(S::TASK_MODES), "{}", ps.op);
    }

    /// Random command streams never break the state-set invariants.
    #[test]
    fn invariants_survive_random_inboxes(
        stream in proptest::collection::vec((proptest::collection::vec(any_command(), 0..3), 0.0f64..12.0, any::<bool>()), 1..30),
    ) {
        let mut ps = drone("d8");
        for (k, (cmds, z, seen)) in stream.into_iter().enumerate() {
            let inbox: Vec<SwarmMessage> =
                cmds.into_iter().map(|c| msg("d5", Recipients::Swarm(SwarmId::new("swarm-3")), c)).collect();
            let obs = [person("p1", 15.0, 0.3)];
            ps = step(ps, seen.then_some(&obs[..]), &inbox, k as f64 * 0.2, pose(0.0, 0.0, z)).0;
        }
    }

    /// Without a car in view there is nothing to enter or leave.
    #[test]
    fn person_only_streams_never_raise_behaviors(
        frames in proptest::collection::vec(proptest::collection::vec((0.0f64..40.0, 0.0f64..40.0), 0..3), 1..80),
    ) {
        let mut det = BehaviorDetectorState::new(DroneId::new("d1"), 3.0, 2.0, 0.3);
        for (k, people) in frames.into_iter().enumerate() {
            let obs: Vec<TargetObservation> = people
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| TargetObservation { geolocation: Vec3::new(x, y, 0.0), ..person(&format!("p{i}"), 10.0, 0.5) })
                .collect();
            let (next, ev) = detect_complex_behavior(det, &obs, k as f64 * 0.2, Vec3::new(0.0, 0.0, 10.0));
            prop_assert!(ev.is_none());
            det = next;
        }
    }
}
