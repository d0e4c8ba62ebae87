use crate::control::{
    centering_yaw_rate, follow_control, navigate_control, search_control, separation_overlay, track_control, FollowParams,
    NavOutcome, Setpoint, SetpointKind, TrackParams,
};
use crate::geometry::{GpsPoint, Pose, Vec3};
use crate::network::{Command, Priority, Recipients, SwarmMessage, GCS};
use crate::perception::{update_lock, TargetObservation};
use crate::scenario::{FollowLaw, Task};

use super::behavior::detect_complex_behavior;
use super::{ArrivalPurpose, DronePolicyState, LockChange, OperationalState as S, Output, SwarmEvent};

/// Yaw rate used to sweep for a target when nothing is locked.
const SCAN_RATE: f64 = 0.5;
/// Below this height a drone counts as on the ground.
const GROUND: f64 = 0.2;

/// Per-step inputs besides observations and inbox.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub time: f64,
    pub dt: f64,
    /// Own pose from the flight controller.
    pub pose: Pose,
    /// Airborne neighbors as body-relative (range, bearing).
    pub neighbors: &'a [(f64, f64)],
    /// Camera field of view, to recover bearing from the image position.
    pub fov: f64,
}

fn at_altitude(p: GpsPoint, alt: f64) -> GpsPoint {
    Vec3::new(p.x, p.y, if p.z > 0.0 { p.z } else { alt })
}

fn go_home(ps: &mut DronePolicyState) {
    ps.retired = true;
    ps.nav_goal = None;
    ps.task = None;
    ps.lock = Default::default();
    if ps.op.intersects(S::IDLE_SLEEPING | S::LANDING | S::RETURNING_TO_BASE) {
        return;
    }
    ps.op = S::RETURNING_TO_BASE;
}

fn enter_task(ps: &mut DronePolicyState, pose: &Pose) {
    ps.lock = Default::default();
    ps.op.remove(S::TASK_MODES);
    match ps.task {
        Some(Task::Track(_)) => {
            ps.op.insert(S::TRACKING);
            ps.station = Some(pose.position);
        }
        Some(Task::Follow(_)) => ps.op.insert(S::FOLLOWING),
        None if !ps.bundle.operational.search_pattern.is_empty() => ps.op.insert(S::SEARCHING),
        None => ps.station = Some(pose.position),
    }
}

fn with_altitude_hold(mut sp: Setpoint, pose: &Pose, alt: f64, period: f64) -> Setpoint {
    let err = alt - pose.position.z;
    match &mut sp.kind {
        SetpointKind::LocalVelocity { vz, .. } => *vz = err.clamp(-2.0, 2.0),
        SetpointKind::LocalPosition { dz, .. } => *dz = err.clamp(-2.0, 2.0) * period,
        SetpointKind::GlobalPosition { .. } => {}
    }
    sp
}

/// One operational step.
///
/// Inbox commands are applied first and win over autonomous transitions;
/// `obs` is `Some` on perception ticks only. Perception-driven modes refresh
/// their setpoint on perception ticks and hold it in between.
pub fn step_operational(
    mut ps: DronePolicyState,
    obs: Option<&[TargetObservation]>,
    inbox: &[SwarmMessage],
    ctx: &StepContext<'_>,
) -> (DronePolicyState, Setpoint, Vec<Output>) {
    let mut out = Vec::new();
    let p = ps.bundle.operational.clone();
    let pose = ctx.pose;
    let airborne = pose.position.z > GROUND;
    if airborne {
        ps.endurance_remaining = (ps.endurance_remaining - ctx.dt).max(0.0);
    }

    let mut land_cmd = false;
    for msg in inbox {
        match msg.command {
            Command::Arm | Command::Takeoff => {
                if ps.retired || !ps.op.contains(S::IDLE_SLEEPING) {
                    continue;
                }
                if ps.no_takeoff {
                    out.push(Output::Rejected { command: msg.command, reason: "takeoff-fault".into() });
                    continue;
                }
                ps.op = S::TAKEOFF;
            }
            Command::Land if msg.sender.as_str() != GCS => {
                land_cmd = true;
                ps.land_votes.insert(msg.sender.clone());
                if !ps.retired {
                    ps.op.remove(S::TASK_MODES | S::NAVIGATING_TO_GPS);
                    ps.nav_goal = None;
                    ps.task = None;
                    ps.station.get_or_insert(pose.position);
                }
                if !ps.land_echoed {
                    ps.land_echoed = true;
                    out.push(Output::Send {
                        priority: Priority::Tactical,
                        recipients: Recipients::Swarm(ps.swarm().clone()),
                        command: Command::Land,
                    });
                }
                if ps.land_votes.len() >= ps.bundle.tactical.land_quorum {
                    go_home(&mut ps);
                }
            }
            Command::Land | Command::Rtb | Command::MissionEnd => {
                land_cmd = true;
                go_home(&mut ps);
            }
            Command::Goto(point) => {
                if ps.retired || land_cmd {
                    continue;
                }
                let goal = match point {
                    Some(g) => {
                        let (ox, oy) = match msg.recipients {
                            Recipients::Swarm(_) => p.formation_offset,
                            _ => (0.0, 0.0),
                        };
                        Vec3::new(g.x + ox, g.y + oy, 0.0)
                    }
                    None => match p.predefined_waypoint {
                        Some(w) => w,
                        None => {
                            out.push(Output::Rejected { command: msg.command, reason: "unknown-waypoint".into() });
                            continue;
                        }
                    },
                };
                ps.nav_goal = Some(at_altitude(Vec3::new(goal.x, goal.y, 0.0), p.altitude));
                if !ps.op.intersects(S::IDLE_SLEEPING | S::TAKEOFF) {
                    ps.op.remove(S::FOLLOWING | S::TRACKING);
                    ps.op.insert(S::NAVIGATING_TO_GPS);
                }
            }
            Command::Track(c) | Command::Follow(c) => {
                // LAND anywhere in the inbox wins over task assignments.
                if ps.retired || land_cmd {
                    continue;
                }
                ps.task = Some(match msg.command {
                    Command::Track(_) => Task::Track(c),
                    _ => Task::Follow(c),
                });
                if airborne && !ps.op.intersects(S::IDLE_SLEEPING | S::TAKEOFF | S::NAVIGATING_TO_GPS) {
                    enter_task(&mut ps, &pose);
                }
            }
        }
    }

    if airborne && !ps.retired && ps.endurance_remaining < p.return_margin {
        go_home(&mut ps);
    }

    // Autonomous transitions.
    if ps.op.contains(S::TAKEOFF) && pose.position.z >= p.altitude - 0.5 {
        ps.op.remove(S::TAKEOFF);
        if ps.nav_goal.is_some() {
            ps.op.insert(S::NAVIGATING_TO_GPS);
            if ps.task.is_none() && !p.search_pattern.is_empty() {
                ps.op.insert(S::SEARCHING);
            }
        } else {
            enter_task(&mut ps, &pose);
        }
    }
    if ps.op.contains(S::LANDING) && pose.position.z < GROUND {
        ps.op = S::IDLE_SLEEPING;
        ps.station = None;
    }

    if let (Some(obs), false) = (obs, ps.retired || land_cmd) {
        let wanted = ps.wanted_class();
        if ps.op.intersects(S::TASK_MODES) {
            let before = ps.lock.locked_id.clone();
            ps.lock = update_lock(std::mem::take(&mut ps.lock), obs, wanted, ctx.time, p.lost_timeout);
            match (&before, &ps.lock.locked_id) {
                (None, Some(id)) => {
                    out.push(Output::Lock(LockChange::Acquired { class: wanted, target: id.to_string() }));
                    if ps.op.contains(S::SEARCHING) {
                        let location = ps.lock.find(obs).map_or(pose.position, |o| o.geolocation);
                        ps.op.remove(S::SEARCHING | S::NAVIGATING_TO_GPS);
                        ps.nav_goal = None;
                        ps.op.insert(S::FOLLOWING);
                        out.push(Output::Event(SwarmEvent::TargetFound { class: wanted, location }));
                    }
                    if ps.op.contains(S::FOLLOWING) {
                        ps.follow_started.get_or_insert(ctx.time);
                    }
                }
                (Some(_), None) => {
                    out.push(Output::Lock(LockChange::Lost { class: wanted }));
                    if ps.op.contains(S::FOLLOWING) {
                        out.push(Output::Event(SwarmEvent::TargetLost { class: wanted }));
                    }
                }
                _ => {}
            }
        }
        if airborne && !ps.bundle.tactical.report_events.is_empty() {
            let (det, ev) = detect_complex_behavior(ps.detector.clone(), obs, ctx.time, pose.position);
            ps.detector = det;
            if let Some(ev) = ev.filter(|e| ps.reports(e.kind)) {
                out.push(Output::Event(SwarmEvent::Behavior(ev)));
            }
        }
    }

    if let (Some(dur), Some(t0)) = (p.follow_duration, ps.follow_started) {
        if ps.op.contains(S::FOLLOWING) && ctx.time - t0 >= dur - 1e-9 {
            out.push(Output::Event(SwarmEvent::TaskComplete));
            go_home(&mut ps);
        }
    }

    // Setpoint for the resulting state.
    let op = ps.op;
    let sp = if op.contains(S::IDLE_SLEEPING) {
        Setpoint::hold()
    } else if op.contains(S::TAKEOFF) {
        Setpoint::global(pose.position.x, pose.position.y, p.altitude, pose.yaw, p.cruise_speed)
    } else if op.contains(S::LANDING) {
        Setpoint::global(ps.home.x, ps.home.y, 0.0, pose.yaw, p.cruise_speed)
    } else if op.contains(S::RETURNING_TO_BASE) {
        let home = Vec3::new(ps.home.x, ps.home.y, p.altitude);
        let (sp, outcome) = navigate_control(&pose, home, p.arrival_radius.min(1.0), p.cruise_speed);
        if outcome == NavOutcome::Arrived {
            ps.op = S::LANDING;
            out.push(Output::Arrived { purpose: ArrivalPurpose::Home, point: home });
        }
        sp
    } else if let (true, Some(goal)) = (op.contains(S::NAVIGATING_TO_GPS), ps.nav_goal) {
        let (sp, outcome) = navigate_control(&pose, goal, p.arrival_radius, p.cruise_speed);
        if outcome == NavOutcome::Arrived {
            ps.op.remove(S::NAVIGATING_TO_GPS);
            ps.nav_goal = None;
            out.push(Output::Arrived { purpose: ArrivalPurpose::Goto, point: goal });
            if !ps.op.contains(S::SEARCHING) {
                enter_task(&mut ps, &pose);
            }
        }
        sp
    } else if op.contains(S::SEARCHING) {
        let pattern: Vec<GpsPoint> = p.search_pattern.iter().map(|w| at_altitude(*w, p.altitude)).collect();
        let (sp, progress, arrived) = search_control(&pattern, ps.waypoint_progress, &pose, p.arrival_radius, p.cruise_speed);
        if arrived {
            let reached = (progress + pattern.len() - 1) % pattern.len();
            out.push(Output::Arrived { purpose: ArrivalPurpose::SearchWaypoint(reached), point: pattern[reached] });
        }
        ps.waypoint_progress = progress;
        sp
    } else if op.intersects(S::FOLLOWING | S::TRACKING) {
        match obs {
            Some(obs) => {
                let seen = ps.lock.find(obs);
                let sp = match (seen, op.contains(S::FOLLOWING), p.follow_law) {
                    (None, _, _) if !ps.lock.is_locked() => Setpoint::velocity(0.0, 0.0, 0.0, SCAN_RATE),
                    (None, _, _) => ps.last_setpoint,
                    (Some(o), true, FollowLaw::Camera) => track_control(
                        o,
                        &TrackParams {
                            d0: p.d0,
                            distance_deadband: p.distance_deadband,
                            center_threshold: p.center_threshold,
                            yaw_gain: p.yaw_gain,
                            approach_speed: p.approach_speed,
                        },
                    ),
                    (Some(o), true, FollowLaw::Radar) => {
                        let mut sp = follow_control(
                            o,
                            &FollowParams { r0: p.r0, max_follow_speed: p.follow_speed_cap, dt: p.control_period },
                        );
                        if let SetpointKind::LocalPosition { dyaw, .. } = &mut sp.kind {
                            let err = o.bbox.cx - 0.5;
                            if err.abs() > p.center_threshold {
                                *dyaw = err * ctx.fov;
                            }
                        }
                        sp
                    }
                    (Some(o), false, _) => {
                        let yaw_rate = centering_yaw_rate(o.bbox.cx, p.center_threshold, p.yaw_gain);
                        let station = *ps.station.get_or_insert(pose.position);
                        let d = (station - pose.position).scale(0.5).clamp_norm(2.0);
                        let (vx, vy) = pose.world_to_body(d.x, d.y);
                        Setpoint::velocity(vx, vy, 0.0, yaw_rate)
                    }
                };
                if let (Some(o), true) = (seen, op.contains(S::FOLLOWING)) {
                    out.push(Output::FollowSample { range: o.range, r0: p.r0, cx: o.bbox.cx });
                }
                with_altitude_hold(sp, &pose, p.altitude, p.control_period)
            }
            None => with_altitude_hold(ps.last_setpoint, &pose, p.altitude, p.control_period),
        }
    } else {
        let station = *ps.station.get_or_insert(pose.position);
        Setpoint::global(station.x, station.y, p.altitude, pose.yaw, p.cruise_speed)
    };
    ps.last_setpoint = sp;

    let sp = if airborne && !ps.op.intersects(S::IDLE_SLEEPING | S::TAKEOFF | S::LANDING) {
        separation_overlay(sp, ctx.neighbors, p.min_sep, p.repulse_gain)
    } else {
        sp
    };
    debug_assert!(ps.op.is_valid(), "invalid state set {}", ps.op);
    (ps, sp, out)
}
