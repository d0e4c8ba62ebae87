//! Dense-to-sparse perception: ground truth in, per-target observation
//! vectors out, plus the first-seen target lock.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{GpsPoint, Vec3};
use crate::ids::{DroneId, EntityId};
use crate::scenario::{EntityKind, MissionSpec};
use crate::world::{relative, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TargetClass {
    Person,
    Car,
    Unknown,
}

impl TargetClass {
    pub fn name(self) -> &'static str {
        match self {
            TargetClass::Person => "Person",
            TargetClass::Car => "Car",
            TargetClass::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Person" => Some(TargetClass::Person),
            "Car" => Some(TargetClass::Car),
            "Unknown" => Some(TargetClass::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSuite {
    pub rgb_fov: f64,
    pub rgb_max_range: f64,
    pub depth_max_range: f64,
    pub radar_max_range: f64,
    pub radar_range_sigma: f64,
    pub detect_prob_base: f64,
    pub dark_side_penalty: f64,
    pub rate: f64,
}

impl SensorSuite {
    pub fn from_mission(m: &MissionSpec) -> Self {
        Self {
            rgb_fov: m.rgb_fov(),
            rgb_max_range: m.rgb_max_range(),
            depth_max_range: m.depth_max_range(),
            radar_max_range: m.radar_max_range(),
            radar_range_sigma: m.radar_range_sigma(),
            detect_prob_base: m.detect_prob_base(),
            dark_side_penalty: m.dark_side_penalty(),
            rate: m.perception_rate(),
        }
    }
}

/// Normalized image-plane box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetObservation {
    pub target_class: TargetClass,
    pub confidence: f64,
    pub bbox: BBox,
    pub range: f64,
    /// Counter-clockwise from the drone heading.
    pub bearing: f64,
    pub geolocation: GpsPoint,
    pub stamp: f64,
    /// Ground-truth handle. Policies use it only as an opaque track id.
    pub observed_id: EntityId,
}

impl TargetObservation {
    /// Bearing recovered from the image position.
    pub fn bearing_from_cx(cx: f64, fov: f64) -> f64 {
        (cx - 0.5) * fov
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetLock {
    pub locked_id: Option<EntityId>,
    pub acquired_at: f64,
    pub last_seen: f64,
}

impl TargetLock {
    pub fn is_locked(&self) -> bool {
        self.locked_id.is_some()
    }

    /// The locked target's observation in this batch, if any.
    pub fn find<'a>(&self, obs: &'a [TargetObservation]) -> Option<&'a TargetObservation> {
        let id = self.locked_id.as_ref()?;
        obs.iter().find(|o| &o.observed_id == id)
    }
}

/// Detection probability at `range`, degraded on the dark side.
pub fn detect_prob(range: f64, suite: &SensorSuite, dark_side: bool) -> f64 {
    let falloff = (1.0 - range / suite.rgb_max_range).clamp(0.0, 1.0);
    let penalty = if dark_side { suite.dark_side_penalty } else { 1.0 };
    (suite.detect_prob_base * falloff * penalty).clamp(0.0, 1.0)
}

// Nominal target sizes (width, height) in meters, for the box only.
fn nominal_size(class: TargetClass) -> (f64, f64) {
    match class {
        TargetClass::Person => (0.6, 1.8),
        TargetClass::Car => (4.5, 1.5),
        TargetClass::Unknown => (1.0, 1.0),
    }
}

/// Observations of every visible person and car, in entity-id order.
///
/// Each candidate inside the field of view and class range consumes exactly
/// one uniform and one normal draw, so the stream position depends only on
/// geometry, never on detection outcomes.
pub fn sense<R: Rng>(state: &WorldState, drone: &DroneId, suite: &SensorSuite, rng: &mut R) -> Vec<TargetObservation> {
    let Some(me) = state.entity(drone) else { return Vec::new() };
    let noise = Normal::new(0.0, suite.radar_range_sigma.max(0.0)).expect("sigma is finite and non-negative");
    let sun = state.sun_azimuth.map(|a| (a.cos(), a.sin()));
    let mut out = Vec::new();
    for (id, ent) in &state.entities {
        let (class, max_range) = match ent.kind {
            EntityKind::Person => (TargetClass::Person, suite.rgb_max_range),
            EntityKind::Car => (TargetClass::Car, suite.depth_max_range),
            _ => continue,
        };
        if ent.carried_by.is_some() {
            continue;
        }
        let (range, bearing, elevation) = relative(&me.pose, ent.pose.position);
        if bearing.abs() > suite.rgb_fov / 2.0 || range > max_range {
            continue;
        }
        let dark_side = match (class, sun) {
            (TargetClass::Car, Some((sx, sy))) => {
                let d = me.pose.position - ent.pose.position;
                d.x * sx + d.y * sy < 0.0
            }
            _ => false,
        };
        let p = detect_prob(range, suite, dark_side);
        let u: f64 = rng.gen();
        let n = noise.sample(rng);
        if u >= p {
            continue;
        }
        let measured = (range + n).max(1e-3);
        let dir = if range > 0.0 { (ent.pose.position - me.pose.position).scale(1.0 / range) } else { Vec3::ZERO };
        let (sw, sh) = nominal_size(class);
        let vfov = suite.rgb_fov * 0.75;
        let ang = |size: f64| 2.0 * (size / 2.0).atan2(range.max(1e-3));
        out.push(TargetObservation {
            target_class: class,
            confidence: p,
            bbox: BBox {
                cx: (0.5 + bearing / suite.rgb_fov).clamp(0.0, 1.0),
                cy: (0.5 - elevation / vfov).clamp(0.0, 1.0),
                w: (ang(sw) / suite.rgb_fov).clamp(1e-3, 1.0),
                h: (ang(sh) / vfov).clamp(1e-3, 1.0),
            },
            range: measured,
            bearing,
            geolocation: me.pose.position + dir.scale(measured),
            stamp: state.time,
            observed_id: id.clone(),
        });
    }
    out
}

/// First-seen lock: acquire the first observation of `wanted`, refresh while
/// the locked handle is seen, drop it after `lost_timeout` without sight.
pub fn update_lock(lock: TargetLock, obs: &[TargetObservation], wanted: TargetClass, time: f64, lost_timeout: f64) -> TargetLock {
    match &lock.locked_id {
        None => match obs.iter().find(|o| o.target_class == wanted) {
            Some(o) => TargetLock { locked_id: Some(o.observed_id.clone()), acquired_at: time, last_seen: time },
            None => lock,
        },
        Some(id) => {
            if obs.iter().any(|o| &o.observed_id == id) {
                TargetLock { last_seen: time, ..lock }
            } else if time - lock.last_seen > lost_timeout {
                TargetLock::default()
            } else {
                lock
            }
        }
    }
}
