//! Incentive/safety lane-change rule used by HDVs and by the rule-based CAV baseline.

use serde::{Deserialize, Serialize};

use super::{idm_acceleration, WorldState};
use crate::action::Action;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneChangeParams {
    /// When false HDVs never change lanes.
    pub enabled: bool,
    /// Minimum acceleration gain (m/s²) that justifies a change.
    pub accel_gain_threshold: f64,
    /// Largest deceleration (m/s², positive) the new follower may be forced into.
    pub safe_decel: f64,
    /// Acceleration (m/s²) subtracted from the threshold for moves to the right and added for
    /// moves to the left, so slow vehicles settle right and overtaking happens on the left.
    pub keep_right_bias: f64,
    /// Seconds an HDV waits after finishing a change.
    pub cooldown: f64,
    /// Seconds a lane change takes.
    pub duration: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self {
            enabled: true,
            accel_gain_threshold: 0.1,
            keep_right_bias: 0.3,
            safe_decel: 3.0,
            cooldown: 5.0,
            duration: 2.0,
        }
    }
}

impl LaneChangeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.safe_decel > 0.0 && self.duration > 0.0 && self.cooldown >= 0.0 && self.accel_gain_threshold >= 0.0
            && self.keep_right_bias >= 0.0) {
            return Err(Error::Config(format!("invalid lane-change parameters {self:?}")));
        }
        Ok(())
    }
}

/// Acceleration gain of moving vehicle `index` into `lane`, or `None` when the move is unsafe.
fn candidate_gain(world: &WorldState, index: usize, lane: usize, current_accel: f64) -> Option<f64> {
    let me = &world.vehicles[index];
    let params = &world.lane_change;

    let new_accel = match world.leader_in_lane(index, lane) {
        Some((j, gap)) => {
            if gap <= me.idm.min_gap {
                return None;
            }
            idm_acceleration(me.speed, world.vehicles[j].speed, gap, &me.idm)
        }
        None => idm_acceleration(me.speed, 0.0, f64::INFINITY, &me.idm),
    };

    if let Some((j, gap)) = world.follower_in_lane(index, lane) {
        let follower = &world.vehicles[j];
        if gap <= follower.idm.min_gap {
            return None;
        }
        let forced = idm_acceleration(follower.speed, me.speed, gap, &follower.idm);
        if forced < -params.safe_decel {
            return None;
        }
    }
    Some(new_accel - current_accel)
}

/// Lane choice for vehicle `index` under the incentive/safety rule.
///
/// A neighbouring lane is chosen only when the prospective follower there keeps its deceleration
/// within `safe_decel`, both prospective gaps exceed the jam distance, and the vehicle's own IDM
/// acceleration improves by more than `accel_gain_threshold`, shifted by `keep_right_bias` in
/// favour of the right. Among qualifying lanes the larger excess gain wins, the right on ties.
/// Vehicles that are mid-maneuver or cooling down stay.
pub fn hdv_lane_change_decision(world: &WorldState, index: usize) -> Action {
    let me = &world.vehicles[index];
    if me.maneuver.is_changing() || me.lc_cooldown > 1e-9 {
        return Action::KeepLane;
    }
    let num_lanes = world.track.num_lanes;
    let current_accel = world.lane_acceleration(index, me.lane);
    let params = &world.lane_change;

    let mut best = (Action::KeepLane, 0.0);
    for action in [Action::ChangeRight, Action::ChangeLeft] {
        let Some(lane) = action.target_lane(me.lane, num_lanes) else {
            continue;
        };
        let required = match action {
            Action::ChangeRight => params.accel_gain_threshold - params.keep_right_bias,
            _ => params.accel_gain_threshold + params.keep_right_bias,
        };
        if let Some(gain) = candidate_gain(world, index, lane, current_accel) {
            if gain - required > best.1 {
                best = (action, gain - required);
            }
        }
    }
    best.0
}
