use serde::{Deserialize, Serialize};

use crate::scenario::WindSpec;

/// Spatially uniform wind with a sinusoidal gust along the mean direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindField {
    pub mean: (f64, f64),
    pub gust_amplitude: f64,
    pub gust_period: f64,
}

impl From<WindSpec> for WindField {
    fn from(w: WindSpec) -> Self {
        Self { mean: w.mean, gust_amplitude: w.gust_amplitude, gust_period: w.gust_period }
    }
}

impl WindField {
    pub const CALM: WindField = WindField { mean: (0.0, 0.0), gust_amplitude: 0.0, gust_period: 1.0 };

    /// Upper bound on the wind speed over all times.
    pub fn max_speed(&self) -> f64 {
        self.mean.0.hypot(self.mean.1) + self.gust_amplitude
    }
}

/// Wind velocity at `time`. A zero mean gusts along `+x`.
pub fn wind_at(field: &WindField, time: f64) -> (f64, f64) {
    let (mx, my) = field.mean;
    let norm = mx.hypot(my);
    let (ux, uy) = if norm > 0.0 { (mx / norm, my / norm) } else { (1.0, 0.0) };
    let gust = field.gust_amplitude * (2.0 * std::f64::consts::PI * time / field.gust_period).sin();
    (mx + gust * ux, my + gust * uy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calm_field_is_zero() {
        for t in [0.0, 1.3, 77.0] {
            assert_eq!(wind_at(&WindField { mean: (0.0, 0.0), gust_amplitude: 0.0, gust_period: 5.0 }, t), (0.0, 0.0));
        }
    }

    #[test]
    fn gust_peak_and_zero_crossing() {
        let f = WindField { mean: (2.0, 0.0), gust_amplitude: 1.0, gust_period: 10.0 };
        let (wx, wy) = wind_at(&f, 2.5);
        assert!((wx - 3.0).abs() < 1e-12 && wy.abs() < 1e-12);
        assert_eq!(wind_at(&f, 0.0), (2.0, 0.0));
    }
}
