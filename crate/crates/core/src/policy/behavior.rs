use serde::{Deserialize, Serialize};

use crate::geometry::GpsPoint;
use crate::ids::DroneId;
use crate::perception::{TargetClass, TargetObservation};
use crate::scenario::BehaviorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexBehaviorEvent {
    pub kind: BehaviorKind,
    pub location: GpsPoint,
    pub stamp: f64,
    pub reporter: DroneId,
    /// Where the reporter was when it raised the event.
    pub reporter_position: GpsPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDetectorState {
    pub owner: DroneId,
    pub person_near_car_since: Option<f64>,
    /// Set once co-location held for a full confirm window.
    pub near_confirmed: bool,
    pub person_missing_since: Option<f64>,
    pub car_stopped_since: Option<f64>,
    pub stop_confirmed: bool,
    /// The car has been seen driving; only then can someone get out.
    pub car_moved: bool,
    pub proximity_eps: f64,
    pub confirm_window: f64,
    pub stop_speed: f64,
    last_car: Option<(GpsPoint, f64)>,
}

impl BehaviorDetectorState {
    pub fn new(owner: DroneId, proximity_eps: f64, confirm_window: f64, stop_speed: f64) -> Self {
        Self {
            owner,
            person_near_car_since: None,
            near_confirmed: false,
            person_missing_since: None,
            car_stopped_since: None,
            stop_confirmed: false,
            car_moved: false,
            proximity_eps,
            confirm_window,
            stop_speed,
            last_car: None,
        }
    }

    fn reset_enter(&mut self) {
        self.person_near_car_since = None;
        self.near_confirmed = false;
        self.person_missing_since = None;
    }

    fn reset_exit(&mut self) {
        self.car_stopped_since = None;
        self.stop_confirmed = false;
        self.car_moved = false;
    }
}

/// Watches the observation stream for a person entering or leaving a car.
///
/// Entering: person and car within `proximity_eps` for `confirm_window`,
/// then the person unseen for `confirm_window` while the car stays in view.
/// Exiting: a car seen driving stays below `stop_speed` for `confirm_window`
/// with nobody near it, then a person shows up within `proximity_eps` of it.
/// Each pattern resets independently after its event. `reporter_position` fills the event's field of the same name.
pub fn detect_complex_behavior(
    mut det: BehaviorDetectorState,
    obs: &[TargetObservation],
    time: f64,
    reporter_position: GpsPoint,
) -> (BehaviorDetectorState, Option<ComplexBehaviorEvent>) {
    let car = obs.iter().find(|o| o.target_class == TargetClass::Car);
    let persons: Vec<_> = obs.iter().filter(|o| o.target_class == TargetClass::Person).collect();
    let Some(car) = car else {
        // A missed car detection pauses both patterns rather than resetting
        // them; detection is probabilistic at range.
        return (det, None);
    };
    let near = persons
        .iter()
        .any(|p| p.geolocation.horizontal_distance(car.geolocation) <= det.proximity_eps);

    let event = |kind| ComplexBehaviorEvent {
        kind,
        location: car.geolocation,
        stamp: time,
        reporter: det.owner.clone(),
        reporter_position,
    };

    // Entering.
    if near {
        det.person_missing_since = None;
        let since = *det.person_near_car_since.get_or_insert(time);
        if time - since >= det.confirm_window - 1e-9 {
            det.near_confirmed = true;
        }
    } else if !persons.is_empty() {
        det.person_near_car_since = None;
        det.near_confirmed = false;
        det.person_missing_since = None;
    } else if det.near_confirmed {
        det.person_near_car_since = None;
        let since = *det.person_missing_since.get_or_insert(time);
        if time - since >= det.confirm_window - 1e-9 {
            let ev = event(BehaviorKind::PersonEnteredCar);
            det.reset_enter();
            return (det, Some(ev));
        }
    }

    // Exiting.
    let speed = det.last_car.map(|(p, t)| {
        if time > t {
            p.horizontal_distance(car.geolocation) / (time - t)
        } else {
            0.0
        }
    });
    det.last_car = Some((car.geolocation, time));
    match speed {
        Some(v) if v >= det.stop_speed => {
            det.car_moved = true;
            det.car_stopped_since = None;
            det.stop_confirmed = false;
        }
        Some(_) if det.car_moved => {
            if det.stop_confirmed && near {
                let ev = event(BehaviorKind::PersonExitedCar);
                det.reset_exit();
                return (det, Some(ev));
            }
            // Only a car that has stopped with nobody next to it can later be exited.
            if near {
                det.car_stopped_since = Some(time);
            }
            let since = *det.car_stopped_since.get_or_insert(time);
            if time - since >= det.confirm_window - 1e-9 {
                det.stop_confirmed = true;
            }
        }
        _ => {}
    }
    (det, None)
}
