//! Closed-loop harnesses for the follow and rotate-to-center laws. Shared
//! between the control tests and the acceptance run.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmsim::control::{track_control, Setpoint, TrackParams};
use swarmsim::geometry::{wrap_angle, Pose};
use swarmsim::ids::{DroneId, EntityId, SwarmId};
use swarmsim::network::{Command, Priority, Recipients, SwarmMessage};
use swarmsim::perception::{sense, SensorSuite, TargetClass};
use swarmsim::policy::{step_operational, DronePolicyState, OperationalState as S, StepContext};
use swarmsim::scenario::{compile_policies, parse_scenario, ScenarioSpec};
use swarmsim::world::{ground_truth_relative, step_world, WorldState};

pub const DT: f64 = 0.05;
pub const PERCEPTION_EVERY: u64 = 4;

pub fn follow_scenario(wind_x: f64) -> ScenarioSpec {
    parse_scenario(&format!(
        "[world]
extent = -100 -100 600 200
timestep = 0.05
duration_limit = 120
seed = 1
wind_mean = {wind_x} 0

[entity base]
kind = BaseStation
pose = 0 0 0 0

[entity p1]
kind = Person
pose = 25 0 0 0
max_speed = 1.5

[entity d1]
kind = Drone
pose = 0 0 10 0
max_speed = 8

[swarm f]
role = HandoffFollow
drones = d1
activation = OnStrategicEvent PersonExitedCar

[script]
at 0s p1 WalkTo 500,0 1

[mission]
r0 = 20
follow_duration = 1000
rgb_max_range = 120
depth_max_range = 120
radar_range_sigma = 0
"
    ))
    .unwrap()
}

/// Flies the follow task for `secs` and returns (time, |R - R0|) per tick.
pub fn fly_follow(spec: &ScenarioSpec, secs: f64, seed: u64) -> Vec<(f64, f64)> {
    let d1 = DroneId::new("d1");
    let p1 = EntityId::new("p1");
    let bundle = compile_policies(spec).unwrap().remove(&d1).unwrap();
    let r0 = bundle.operational.r0;
    let mut ps = DronePolicyState::new(d1.clone(), bundle, spec.entities[2].spawn_pose.position);
    let mut world = WorldState::from_scenario(spec);
    let suite = SensorSuite::from_mission(&spec.mission);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to = || Recipients::Swarm(SwarmId::new("f"));
    let mut inbox = vec![
        SwarmMessage::new(0, Priority::Strategic, EntityId::new("gcs"), to(), Command::Arm, 0.0),
        SwarmMessage::new(1, Priority::Strategic, EntityId::new("gcs"), to(), Command::Follow(TargetClass::Person), 0.0),
    ];
    let mut errors = Vec::new();
    let ticks = (secs / DT).round() as u64;
    for tick in 0..ticks {
        let t = tick as f64 * DT;
        let obs = (tick % PERCEPTION_EVERY == 0).then(|| sense(&world, &d1, &suite, &mut rng));
        let ctx = StepContext { time: t, dt: DT, pose: world.entity(&d1).unwrap().pose, neighbors: &[], fov: suite.rgb_fov };
        let (next, sp, _) = step_operational(ps, obs.as_deref(), &inbox, &ctx);
        ps = next;
        inbox.clear();
        world = step_world(world, &BTreeMap::from([(d1.clone(), sp)]), DT).unwrap();
        let (range, _, _) = ground_truth_relative(&world, &d1, &p1).unwrap();
        errors.push((t + DT, (range - r0).abs()));
    }
    assert!(ps.op.contains(S::FOLLOWING), "still following at the end: {}", ps.op);
    errors
}

pub fn worst_after(errors: &[(f64, f64)], t0: f64) -> f64 {
    errors.iter().filter(|(t, _)| *t >= t0).map(|(_, e)| *e).fold(0.0, f64::max)
}

pub fn track_scenario() -> ScenarioSpec {
    parse_scenario(
        "[world]
extent = -100 -100 100 100
timestep = 0.05
duration_limit = 60
seed = 1

[entity base]
kind = BaseStation
pose = -50 -50 0 0

[entity c1]
kind = Car
pose = 30 0 0 0
max_speed = 10

[entity d1]
kind = Drone
pose = 0 0 10 0
max_speed = 8

[swarm t]
role = TrackVehicle
drones = d1
waypoints = 0,0
activation = AtStart

[mission]
rgb_max_range = 120
depth_max_range = 120
",
    )
    .unwrap()
}

/// Rotates to center the car from initial bearing `b` (counter-clockwise,
/// radians); returns the bearing after every tick and the time the car was
/// first centered.
pub fn fly_track(spec: &ScenarioSpec, b: f64, seed: u64) -> (Vec<f64>, Option<f64>) {
    let d1 = DroneId::new("d1");
    let c1 = EntityId::new("c1");
    let m = &spec.mission;
    let params = TrackParams {
        // Distance is held by the deadband; only rotation is under test.
        d0: 30.5,
        distance_deadband: 5.0,
        center_threshold: m.center_threshold(),
        yaw_gain: m.yaw_gain(),
        approach_speed: m.approach_speed(),
    };
    let mut world = WorldState::from_scenario(spec);
    // Heading such that the car sits at bearing b.
    let drone = world.entities.get_mut(&d1).unwrap();
    drone.pose = Pose { yaw: wrap_angle(-b), ..drone.pose };
    let suite = SensorSuite::from_mission(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fov = suite.rgb_fov;
    let mut sp = Setpoint::hold();
    let mut bearings = Vec::new();
    let mut centered = None;
    for tick in 0..(20.0 / DT) as u64 {
        let t = tick as f64 * DT;
        let (_, bearing, _) = ground_truth_relative(&world, &d1, &c1).unwrap();
        let cx = 0.5 + bearing / fov;
        if centered.is_none() && (cx - 0.5).abs() <= params.center_threshold {
            centered = Some(t);
        }
        if tick % PERCEPTION_EVERY == 0 {
            let obs = sense(&world, &d1, &suite, &mut rng);
            sp = match obs.iter().find(|o| o.observed_id == c1) {
                Some(o) => track_control(o, &params),
                None => Setpoint::hold(),
            };
        }
        world = step_world(world, &BTreeMap::from([(d1.clone(), sp)]), DT).unwrap();
        bearings.push(bearing);
    }
    (bearings, centered)
}

/// Flies [`fly_track`] from bearing `b` and checks it: centered within 10 s,
/// never rotating away or overshooting, still centered at the end. Returns
/// the time to center.
pub fn check_track(spec: &ScenarioSpec, b: f64, seed: u64) -> Result<f64, String> {
    let fov = spec.mission.rgb_fov();
    let threshold = spec.mission.center_threshold();
    let (bearings, centered) = fly_track(spec, b, seed);
    let t = centered.ok_or_else(|| format!("bearing {b:.3}: never centered"))?;
    if t > 10.0 {
        return Err(format!("bearing {b:.3}: centered only after {t:.2} s"));
    }
    for w in bearings.windows(2) {
        if (w[0] / fov).abs() <= threshold {
            continue;
        }
        if w[1].signum() != w[0].signum() && w[1].abs() > threshold * fov {
            return Err(format!("bearing {b:.3}: overshot {w:?}"));
        }
        if w[1].abs() > w[0].abs() + 1e-9 {
            return Err(format!("bearing {b:.3}: rotated away {w:?}"));
        }
    }
    let last = *bearings.last().unwrap();
    if (last / fov).abs() > threshold {
        return Err(format!("bearing {b:.3}: drifted off center to {last:.3}"));
    }
    Ok(t)
}

/// The 36 initial bearings, spread evenly across the field of view.
pub fn bearing_grid(fov: f64) -> impl Iterator<Item = f64> {
    (0..36).map(move |k| -fov / 2.0 + fov * (k as f64 + 0.5) / 36.0)
}
