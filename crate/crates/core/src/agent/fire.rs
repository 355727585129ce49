//! Debounced smoke/temperature watchdog.

use serde::{Deserialize, Serialize};

use crate::world::SensorReading;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FireConfig {
    pub smoke_threshold_ppm: f64,
    pub temperature_threshold_c: f64,
    pub debounce_ticks: u32,
}

impl Default for FireConfig {
    fn default() -> Self {
        Self {
            smoke_threshold_ppm: 300.0,
            temperature_threshold_c: 57.0,
            debounce_ticks: 3,
        }
    }
}

impl FireConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.smoke_threshold_ppm > 0.0 && self.smoke_threshold_ppm.is_finite()) {
            return Err("smoke_threshold_ppm must be positive");
        }
        if !(self.temperature_threshold_c > 0.0 && self.temperature_threshold_c.is_finite()) {
            return Err("temperature_threshold_c must be positive");
        }
        if self.debounce_ticks == 0 {
            return Err("debounce_ticks must be positive");
        }
        Ok(())
    }

    pub fn over_threshold(&self, reading: &SensorReading) -> bool {
        reading.smoke_ppm > self.smoke_threshold_ppm || reading.temperature_c > self.temperature_threshold_c
    }
}

/// Advances the consecutive-over-threshold counter. Returns the new counter
/// and whether this reading raises an alert. The counter saturates at the
/// debounce length so a sustained fire alerts once until it clears.
pub fn fire_check(reading: &SensorReading, cfg: &FireConfig, counter: u32) -> (u32, bool) {
    if !cfg.over_threshold(reading) {
        return (0, false);
    }
    if counter >= cfg.debounce_ticks {
        return (counter, false);
    }
    let next = counter + 1;
    (next, next == cfg.debounce_ticks)
}
