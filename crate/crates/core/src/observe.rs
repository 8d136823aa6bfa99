//! Tripartite observation of the CAV: downstream vehicles received over the connectivity link,
//! per-lane averages of the sensed neighbourhood, and the CAV's own normalized state.

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::sim::{TrackConfig, Vehicle, WorldState};

/// Smallest relative distance used when inverting distances into weights.
pub const MIN_WEIGHT_DISTANCE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeConfig {
    /// Sensing radius in meters.
    pub sensing: f64,
    /// Forward connectivity range in meters.
    pub connectivity: f64,
}

impl Default for RangeConfig {
    fn default() -> Self {
        Self {
            sensing: 50.0,
            connectivity: 300.0,
        }
    }
}

impl RangeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensing > 0.0 && self.connectivity > 0.0) {
            return Err(Error::Config(format!("ranges must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Feature row `(dx, dv, dl)`.
pub type FeatureRow = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Downstream vehicles, ascending by distance.
    pub downstream: Vec<FeatureRow>,
    /// Local rows in the order left, current, right.
    pub local: [FeatureRow; 3],
    /// `(position_frac, speed_frac, lane_frac)`.
    pub cav: [f64; 3],
    /// Indexed by [`Action::index`]; `false` marks a move off the road.
    pub action_mask: [bool; 3],
}

impl Observation {
    pub fn is_legal(&self, action: Action) -> bool {
        self.action_mask[action.index()]
    }

    pub fn legal_actions(&self) -> impl Iterator<Item = Action> + '_ {
        Action::ALL.into_iter().filter(|a| self.is_legal(*a))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightScheme {
    Uniform,
    Linear,
    Quadratic,
}

/// Relative features of `other` seen from `cav`: wrapped signed displacement over the connectivity
/// range, speed difference over the speed limit, and lane difference.
pub fn relative_features(other: &Vehicle, cav: &Vehicle, ranges: &RangeConfig, track: &TrackConfig) -> FeatureRow {
    let dx = track.signed_displacement(cav.position, other.position) / ranges.connectivity;
    let dv = (other.speed - cav.speed) / track.speed_limit;
    let dl = other.lane as f64 - cav.lane as f64;
    [dx, dv, dl]
}

/// Vehicles strictly ahead with forward distance in `(sensing, connectivity]`, nearest first.
///
/// Distances are measured forward along the loop, so every `dx` lies in `(0, 1]`.
pub fn downstream_matrix(world: &WorldState, ranges: &RangeConfig) -> Vec<FeatureRow> {
    let cav = world.cav();
    let track = &world.track;
    let mut rows: Vec<FeatureRow> = world
        .vehicles
        .iter()
        .filter(|v| v.id != cav.id)
        .filter_map(|v| {
            let ahead = track.forward_distance(cav.position, v.position);
            (ahead > ranges.sensing && ahead <= ranges.connectivity).then(|| {
                let [_, dv, dl] = relative_features(v, cav, ranges, track);
                [ahead / ranges.connectivity, dv, dl]
            })
        })
        .collect();
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[2].total_cmp(&b[2])).then(a[1].total_cmp(&b[1])));
    rows
}

/// Per-lane averages over vehicles within the sensing radius (ahead or behind), plus the action
/// mask. An empty lane reads `(1, 0, dl)`; a lane beyond the road edge reads `(0, 0, dl)`.
pub fn local_matrix(world: &WorldState, ranges: &RangeConfig) -> ([FeatureRow; 3], [bool; 3]) {
    let cav = world.cav();
    let track = &world.track;
    let slots = [
        (Action::ChangeLeft, -1.0),
        (Action::KeepLane, 0.0),
        (Action::ChangeRight, 1.0),
    ];
    let mut local = [[0.0; 3]; 3];
    let mut mask = [true; 3];
    for (slot, (action, label)) in slots.into_iter().enumerate() {
        let Some(lane) = action.target_lane(cav.lane, track.num_lanes) else {
            local[slot] = [0.0, 0.0, label];
            mask[action.index()] = false;
            continue;
        };
        let (mut sum_dx, mut sum_dv, mut count) = (0.0, 0.0, 0usize);
        for v in world.vehicles.iter().filter(|v| v.id != cav.id && v.lane == lane) {
            if track.signed_displacement(cav.position, v.position).abs() <= ranges.sensing {
                let [dx, dv, _] = relative_features(v, cav, ranges, track);
                sum_dx += dx;
                sum_dv += dv;
                count += 1;
            }
        }
        local[slot] = if count == 0 {
            [1.0, 0.0, label]
        } else {
            [sum_dx / count as f64, sum_dv / count as f64, label]
        };
    }
    (local, mask)
}

pub fn cav_vector(world: &WorldState, track: &TrackConfig) -> [f64; 3] {
    let cav = world.cav();
    [
        cav.position / track.length,
        cav.speed / track.speed_limit,
        cav.lane as f64 / track.num_lanes as f64,
    ]
}

pub fn observe(world: &WorldState, ranges: &RangeConfig) -> Observation {
    let (local, action_mask) = local_matrix(world, ranges);
    Observation {
        downstream: downstream_matrix(world, ranges),
        local,
        cav: cav_vector(world, &world.track),
        action_mask,
    }
}

/// Unnormalized pooling weights: 1, 1/dx or 1/dx², with `dx` clamped below at [`MIN_WEIGHT_DISTANCE`].
pub fn raw_weights(dx: &[f64], scheme: WeightScheme) -> Vec<f64> {
    match scheme {
        WeightScheme::Uniform => vec![1.0; dx.len()],
        WeightScheme::Linear => dx.iter().map(|d| 1.0 / d.max(MIN_WEIGHT_DISTANCE)).collect(),
        WeightScheme::Quadratic => dx.iter().map(|d| d.max(MIN_WEIGHT_DISTANCE).powi(-2)).collect(),
    }
}

/// Pooling weights for downstream rows with relative distances `dx`; they sum to one.
pub fn weights(dx: &[f64], scheme: WeightScheme) -> Vec<f64> {
    let raw = raw_weights(dx, scheme);
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}
