//! Intelligent Driver Model longitudinal control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deceleration returned when the bumper gap is not positive.
pub const EMERGENCY_DECEL: f64 = 9.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired (free-flow) speed v0, m/s.
    pub desired_speed: f64,
    /// Safe time headway T, s.
    pub time_headway: f64,
    /// Jam distance s0, m.
    pub min_gap: f64,
    /// Maximum acceleration a, m/s².
    pub max_accel: f64,
    /// Comfortable deceleration b, m/s².
    pub comfort_decel: f64,
    /// Acceleration exponent δ.
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 30.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.0,
            comfort_decel: 1.5,
            exponent: 4.0,
        }
    }
}

impl IdmParams {
    pub fn with_desired_speed(self, desired_speed: f64) -> Self {
        Self {
            desired_speed,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("IDM {name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Desired dynamic gap s*.
    pub fn desired_gap(&self, v: f64, v_leader: f64) -> f64 {
        self.min_gap
            + v * self.time_headway
            + v * (v - v_leader) / (2.0 * (self.max_accel * self.comfort_decel).sqrt())
    }

    /// Bumper gap at which a platoon of identical vehicles is stationary at speed `v`.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        let free = 1.0 - (v / self.desired_speed).powf(self.exponent);
        if free <= 0.0 {
            return f64::INFINITY;
        }
        (self.min_gap + v * self.time_headway) / free.sqrt()
    }
}

/// IDM acceleration for a vehicle at speed `v` following a leader at `v_leader` with bumper gap `gap`.
///
/// Pass `f64::INFINITY` as the gap on a free road. A non-positive gap yields `-EMERGENCY_DECEL`.
pub fn idm_acceleration(v: f64, v_leader: f64, gap: f64, p: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -EMERGENCY_DECEL;
    }
    let free = (v / p.desired_speed).powf(p.exponent);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        (p.desired_gap(v, v_leader) / gap).powi(2)
    };
    p.max_accel * (1.0 - free - interaction)
}
