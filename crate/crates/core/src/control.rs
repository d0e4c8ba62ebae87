//! Operational motion controllers: observations and policy state in,
//! flight-controller setpoints out.
//!
//! Body-frame vectors are (forward, left, up). Image `cx` grows with the
//! counter-clockwise bearing, so `cx > 0.5` means the target lies left of
//! the optical axis. The yaw-rate field of a local velocity setpoint uses
//! the flight-controller convention (positive = clockwise seen from above),
//! which makes turning towards such a target a negative rate.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, GpsPoint, Pose};
use crate::perception::TargetObservation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SetpointKind {
    LocalVelocity { vx: f64, vy: f64, vz: f64, yaw_rate: f64 },
    /// Body-frame displacement to cover within one control period.
    LocalPosition { dx: f64, dy: f64, dz: f64, dyaw: f64 },
    GlobalPosition { x: f64, y: f64, z: f64, yaw: f64, speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub kind: SetpointKind,
    /// Body-frame velocity added on top of the position modes by the
    /// separation overlay. Folded directly into local velocity setpoints.
    pub overlay: (f64, f64),
}

impl Setpoint {
    pub fn velocity(vx: f64, vy: f64, vz: f64, yaw_rate: f64) -> Self {
        Self { kind: SetpointKind::LocalVelocity { vx, vy, vz, yaw_rate }, overlay: (0.0, 0.0) }
    }

    pub fn local(dx: f64, dy: f64, dz: f64, dyaw: f64) -> Self {
        Self { kind: SetpointKind::LocalPosition { dx, dy, dz, dyaw }, overlay: (0.0, 0.0) }
    }

    pub fn global(x: f64, y: f64, z: f64, yaw: f64, speed: f64) -> Self {
        Self { kind: SetpointKind::GlobalPosition { x, y, z, yaw, speed }, overlay: (0.0, 0.0) }
    }

    pub fn hold() -> Self {
        Self::velocity(0.0, 0.0, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    pub d0: f64,
    pub distance_deadband: f64,
    pub center_threshold: f64,
    pub yaw_gain: f64,
    pub approach_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowParams {
    pub r0: f64,
    pub max_follow_speed: f64,
    /// Control period the displacement is meant to be flown in.
    pub dt: f64,
}

/// Yaw-rate part of the rotate-to-center law.
pub fn centering_yaw_rate(cx: f64, center_threshold: f64, yaw_gain: f64) -> f64 {
    let err = cx - 0.5;
    if err.abs() > center_threshold {
        -yaw_gain * err
    } else {
        0.0
    }
}

/// Rotate until the target is centered; close in or back off around D0.
pub fn track_control(obs: &TargetObservation, p: &TrackParams) -> Setpoint {
    let yaw_rate = centering_yaw_rate(obs.bbox.cx, p.center_threshold, p.yaw_gain);
    let forward = if obs.range > p.d0 + p.distance_deadband {
        p.approach_speed
    } else if obs.range < p.d0 - p.distance_deadband {
        -p.approach_speed
    } else {
        0.0
    };
    Setpoint::velocity(forward, 0.0, 0.0, yaw_rate)
}

/// Radar range feedback: move `-(R - R0)` along the camera axis, limited to
/// what `max_follow_speed` allows within one control period.
pub fn follow_control(obs: &TargetObservation, p: &FollowParams) -> Setpoint {
    // The displacement -(R - R0) is taken along the range vector pointing
    // back at the drone, so a positive range error means moving forward.
    let limit = p.max_follow_speed * p.dt;
    let forward = (obs.range - p.r0).clamp(-limit, limit);
    Setpoint::local(forward, 0.0, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NavOutcome {
    EnRoute,
    Arrived,
}

/// Fly to a GPS point facing it; hold once inside the arrival radius.
pub fn navigate_control(current: &Pose, goal: GpsPoint, arrival_radius: f64, cruise_speed: f64) -> (Setpoint, NavOutcome) {
    let d = goal - current.position;
    if d.horizontal_norm() <= arrival_radius {
        return (
            Setpoint::global(goal.x, goal.y, goal.z, current.yaw, cruise_speed),
            NavOutcome::Arrived,
        );
    }
    let yaw = wrap_angle(d.y.atan2(d.x));
    (Setpoint::global(goal.x, goal.y, goal.z, yaw, cruise_speed), NavOutcome::EnRoute)
}

/// Visits the pattern in order and loops back to the start.
pub fn search_control(
    pattern: &[GpsPoint],
    progress: usize,
    current: &Pose,
    arrival_radius: f64,
    cruise_speed: f64,
) -> (Setpoint, usize, bool) {
    assert!(!pattern.is_empty(), "search pattern must be non-empty");
    let mut idx = progress % pattern.len();
    let mut arrived = false;
    if pattern[idx].horizontal_distance(current.position) <= arrival_radius {
        idx = (idx + 1) % pattern.len();
        arrived = true;
    }
    let (sp, _) = navigate_control(current, pattern[idx], arrival_radius, cruise_speed);
    (sp, idx, arrived)
}

/// Adds a repulsive velocity away from every neighbor inside `min_sep`.
/// Neighbors are given as body-relative (range, bearing).
pub fn separation_overlay(setpoint: Setpoint, neighbors: &[(f64, f64)], min_sep: f64, repulse_gain: f64) -> Setpoint {
    let (mut fx, mut fy) = (0.0, 0.0);
    for &(range, bearing) in neighbors {
        if range < min_sep {
            let mag = repulse_gain * (1.0 - range / min_sep);
            fx -= mag * bearing.cos();
            fy -= mag * bearing.sin();
        }
    }
    if fx == 0.0 && fy == 0.0 {
        return setpoint;
    }
    let mut out = setpoint;
    match &mut out.kind {
        SetpointKind::LocalVelocity { vx, vy, .. } => {
            *vx += fx;
            *vy += fy;
        }
        _ => {
            out.overlay.0 += fx;
            out.overlay.1 += fy;
        }
    }
    out
}
