//! Ring-road microsimulation.
//!
//! Vehicles drive on a closed multi-lane loop. Longitudinal motion follows the IDM, human-driven
//! vehicles (HDVs) add Gaussian acceleration noise and change lanes with an incentive/safety rule,
//! and the single connected autonomous vehicle (CAV) changes lanes only when commanded.
//!
//! A lane change lasts a fixed duration during which the vehicle occupies both the origin and the
//! target lane; its lane index flips at the midpoint.

mod idm;
mod lane_change;
pub mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use idm::{idm_acceleration, IdmParams, EMERGENCY_DECEL};
pub use lane_change::{hdv_lane_change_decision, LaneChangeParams};

use crate::action::Action;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    /// Loop length in meters.
    pub length: f64,
    pub num_lanes: usize,
    /// Speed limit in m/s, used for normalization and as the CAV desired speed.
    pub speed_limit: f64,
    /// Integration step in seconds.
    pub dt: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            length: 500.0,
            num_lanes: 4,
            speed_limit: 50.0,
            dt: 0.1,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Config(format!("track length must be positive, got {}", self.length)));
        }
        if self.num_lanes < 2 {
            return Err(Error::Config(format!("need at least 2 lanes, got {}", self.num_lanes)));
        }
        if !(self.speed_limit > 0.0) {
            return Err(Error::Config(format!("speed limit must be positive, got {}", self.speed_limit)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// Forward distance from `from` to `to` along the direction of travel, in `[0, length)`.
    pub fn forward_distance(&self, from: f64, to: f64) -> f64 {
        wrap_position(to - from, self.length)
    }

    /// Signed displacement from `from` to `to`, wrapped into `(-length/2, length/2]`.
    pub fn signed_displacement(&self, from: f64, to: f64) -> f64 {
        let d = self.forward_distance(from, to);
        if d > self.length / 2.0 {
            d - self.length
        } else {
            d
        }
    }
}

fn wrap_position(x: f64, length: f64) -> f64 {
    let r = x.rem_euclid(length);
    if r >= length {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleKind {
    Cav,
    Hdv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Maneuver {
    None,
    Changing {
        from_lane: usize,
        target_lane: usize,
        remaining_steps: u32,
        total_steps: u32,
    },
}

impl Maneuver {
    pub fn is_changing(&self) -> bool {
        matches!(self, Maneuver::Changing { .. })
    }

    /// Time left in the maneuver, in seconds.
    pub fn remaining_s(&self, dt: f64) -> f64 {
        match *self {
            Maneuver::None => 0.0,
            Maneuver::Changing { remaining_steps, .. } => remaining_steps as f64 * dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: usize,
    pub kind: VehicleKind,
    pub position: f64,
    pub lane: usize,
    pub speed: f64,
    pub length: f64,
    pub idm: IdmParams,
    /// Standard deviation of the additive acceleration noise (zero for the CAV).
    pub accel_noise_sd: f64,
    pub maneuver: Maneuver,
    pub cumulative_distance: f64,
    /// Seconds before an HDV may start another lane change.
    pub lc_cooldown: f64,
}

impl Vehicle {
    pub fn occupies(&self, lane: usize) -> bool {
        match self.maneuver {
            Maneuver::None => self.lane == lane,
            Maneuver::Changing {
                from_lane,
                target_lane,
                ..
            } => lane == from_lane || lane == target_lane,
        }
    }

    /// The lane index plus, while changing lanes, the second lane held.
    pub fn occupied_lanes(&self) -> (usize, Option<usize>) {
        match self.maneuver {
            Maneuver::None => (self.lane, None),
            Maneuver::Changing {
                from_lane,
                target_lane,
                ..
            } => {
                let other = if self.lane == from_lane { target_lane } else { from_lane };
                (self.lane, Some(other))
            }
        }
    }

    fn shares_lane_with(&self, other: &Vehicle) -> bool {
        let (a, b) = self.occupied_lanes();
        other.occupies(a) || b.is_some_and(|l| other.occupies(l))
    }

    pub fn is_cav(&self) -> bool {
        self.kind == VehicleKind::Cav
    }
}

/// Bumper-to-bumper gap from `follower` forward to `leader`; negative when they overlap.
pub fn ring_gap(follower: &Vehicle, leader: &Vehicle, track: &TrackConfig) -> f64 {
    track.forward_distance(follower.position, leader.position) - leader.length
}

/// Scenario population and dynamics settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub track: TrackConfig,
    /// Total vehicle count including the CAV.
    pub n_vehicles: usize,
    pub vehicle_length: f64,
    /// Shared IDM parameters; desired speeds are drawn per vehicle.
    pub idm: IdmParams,
    pub hdv_initial_speed: (f64, f64),
    pub hdv_desired_speed: (f64, f64),
    pub hdv_noise_sd: (f64, f64),
    pub cav_initial_speed: (f64, f64),
    pub lane_change: LaneChangeParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            track: TrackConfig::default(),
            n_vehicles: 51,
            vehicle_length: 5.0,
            idm: IdmParams::default(),
            hdv_initial_speed: (0.0, 15.0),
            hdv_desired_speed: (15.0, 30.0),
            hdv_noise_sd: (0.0, 1.0),
            cav_initial_speed: (0.0, 15.0),
            lane_change: LaneChangeParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.idm.validate()?;
        self.lane_change.validate()?;
        if self.n_vehicles == 0 {
            return Err(Error::Config("at least one vehicle (the CAV) is required".into()));
        }
        if !(self.vehicle_length > 0.0) {
            return Err(Error::Config(format!("vehicle length must be positive, got {}", self.vehicle_length)));
        }
        let footprint = self.n_vehicles as f64 * (self.vehicle_length + self.idm.min_gap);
        if footprint >= self.track.length {
            return Err(Error::Config(format!(
                "{} vehicles need {footprint} m but the track is {} m long",
                self.n_vehicles, self.track.length
            )));
        }
        for (name, (lo, hi)) in [
            ("hdv_initial_speed", self.hdv_initial_speed),
            ("hdv_desired_speed", self.hdv_desired_speed),
            ("hdv_noise_sd", self.hdv_noise_sd),
            ("cav_initial_speed", self.cav_initial_speed),
        ] {
            if !(lo >= 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if self.hdv_desired_speed.0 <= 0.0 {
            return Err(Error::Config("HDV desired speeds must be positive".into()));
        }
        Ok(())
    }
}

/// Events produced by one call to [`WorldState::step`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    /// A colliding pair (ids ascending); a pair involving the CAV takes precedence.
    pub collision: Option<(usize, usize)>,
    /// Every colliding pair this step.
    pub collisions: Vec<(usize, usize)>,
    pub cav_loop_completed: bool,
    pub cav_lane_change_initiated: bool,
    pub cav_lane_change_completed: bool,
}

impl StepEvents {
    pub fn cav_collided(&self, cav_id: usize) -> bool {
        self.collision.is_some_and(|(a, b)| a == cav_id || b == cav_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub vehicles: Vec<Vehicle>,
    pub step_count: u64,
    pub rng: ChaCha8Rng,
    pub track: TrackConfig,
    pub lane_change: LaneChangeParams,
    cav_index: usize,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Builds the initial world: vehicles evenly spaced around the loop, lanes drawn uniformly.
///
/// Vehicle 0 is the CAV; its desired speed is the speed limit and it carries no noise.
pub fn init_world(config: &SimConfig, seed: u64) -> Result<WorldState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let track = config.track;
    let spacing = track.length / config.n_vehicles as f64;
    let mut vehicles = Vec::with_capacity(config.n_vehicles);
    for id in 0..config.n_vehicles {
        let lane = rng.random_range(0..track.num_lanes);
        let (kind, speed, desired, noise) = if id == 0 {
            let speed = uniform(&mut rng, config.cav_initial_speed);
            (VehicleKind::Cav, speed, track.speed_limit, 0.0)
        } else {
            let speed = uniform(&mut rng, config.hdv_initial_speed);
            let desired = uniform(&mut rng, config.hdv_desired_speed);
            let noise = uniform(&mut rng, config.hdv_noise_sd);
            (VehicleKind::Hdv, speed, desired, noise)
        };
        vehicles.push(Vehicle {
            id,
            kind,
            position: id as f64 * spacing,
            lane,
            speed: speed.min(desired),
            length: config.vehicle_length,
            idm: config.idm.with_desired_speed(desired),
            accel_noise_sd: noise,
            maneuver: Maneuver::None,
            cumulative_distance: 0.0,
            lc_cooldown: 0.0,
        });
    }
    Ok(WorldState {
        vehicles,
        step_count: 0,
        rng,
        track,
        lane_change: config.lane_change,
        cav_index: 0,
    })
}

/// Advances `world` by one step, returning the new snapshot and its events.
pub fn step_world(world: &WorldState, cav_action: Action) -> (WorldState, StepEvents) {
    let mut next = world.clone();
    let events = next.step(cav_action);
    (next, events)
}

impl WorldState {
    /// Assembles a world from explicit vehicles (ids are reassigned to their index).
    pub fn from_vehicles(
        track: TrackConfig,
        lane_change: LaneChangeParams,
        mut vehicles: Vec<Vehicle>,
        seed: u64,
    ) -> Result<Self> {
        track.validate()?;
        lane_change.validate()?;
        let cavs: Vec<usize> = (0..vehicles.len()).filter(|&i| vehicles[i].is_cav()).collect();
        if cavs.len() != 1 {
            return Err(Error::Config(format!("exactly one CAV required, found {}", cavs.len())));
        }
        for (i, v) in vehicles.iter_mut().enumerate() {
            v.id = i;
            v.idm.validate()?;
            if !(0.0..track.length).contains(&v.position) {
                return Err(Error::Config(format!("vehicle {i} position {} is off the loop", v.position)));
            }
            if v.lane >= track.num_lanes {
                return Err(Error::Config(format!("vehicle {i} lane {} is off the road", v.lane)));
            }
            if !(0.0..=v.idm.desired_speed).contains(&v.speed) {
                return Err(Error::Config(format!("vehicle {i} speed {} is out of range", v.speed)));
            }
        }
        Ok(Self {
            vehicles,
            step_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            track,
            lane_change,
            cav_index: cavs[0],
        })
    }

    pub fn cav(&self) -> &Vehicle {
        &self.vehicles[self.cav_index]
    }

    pub fn cav_index(&self) -> usize {
        self.cav_index
    }

    /// Nearest vehicle ahead of `index` occupying `lane`, with its bumper gap.
    pub fn leader_in_lane(&self, index: usize, lane: usize) -> Option<(usize, f64)> {
        let me = &self.vehicles[index];
        self.vehicles
            .iter()
            .enumerate()
            .filter(|&(j, v)| j != index && v.occupies(lane))
            .map(|(j, v)| (j, self.track.forward_distance(me.position, v.position)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, d)| (j, d - self.vehicles[j].length))
    }

    /// Nearest vehicle behind `index` occupying `lane`, with the follower's bumper gap to it.
    pub fn follower_in_lane(&self, index: usize, lane: usize) -> Option<(usize, f64)> {
        let me = &self.vehicles[index];
        self.vehicles
            .iter()
            .enumerate()
            .filter(|&(j, v)| j != index && v.occupies(lane))
            .map(|(j, v)| (j, self.track.forward_distance(v.position, me.position)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, d)| (j, d - me.length))
    }

    /// IDM acceleration of vehicle `index` against its leader in `lane`.
    pub fn lane_acceleration(&self, index: usize, lane: usize) -> f64 {
        let me = &self.vehicles[index];
        match self.leader_in_lane(index, lane) {
            Some((j, gap)) => idm_acceleration(me.speed, self.vehicles[j].speed, gap, &me.idm),
            None => idm_acceleration(me.speed, 0.0, f64::INFINITY, &me.idm),
        }
    }

    fn longitudinal_acceleration(&self, index: usize) -> f64 {
        let (lane, other) = self.vehicles[index].occupied_lanes();
        let acc = self.lane_acceleration(index, lane);
        match other {
            Some(l) => acc.min(self.lane_acceleration(index, l)),
            None => acc,
        }
    }

    fn start_maneuver(&mut self, index: usize, target_lane: usize) {
        let total_steps = (self.lane_change.duration / self.track.dt - 1e-9).ceil().max(1.0) as u32;
        let v = &mut self.vehicles[index];
        v.maneuver = Maneuver::Changing {
            from_lane: v.lane,
            target_lane,
            remaining_steps: total_steps,
            total_steps,
        };
    }

    /// Whether the CAV may start a change toward `action` right now.
    pub fn cav_can_change(&self, action: Action) -> bool {
        let cav = self.cav();
        action.is_lane_change()
            && !cav.maneuver.is_changing()
            && action.target_lane(cav.lane, self.track.num_lanes).is_some()
    }

    /// Advances the world by one `dt` in place.
    pub fn step(&mut self, cav_action: Action) -> StepEvents {
        let mut events = StepEvents::default();
        let dt = self.track.dt;
        let n = self.vehicles.len();

        let mut accel: Vec<f64> = (0..n).map(|i| self.longitudinal_acceleration(i)).collect();
        for (i, acc) in accel.iter_mut().enumerate() {
            if self.vehicles[i].kind == VehicleKind::Hdv {
                let z: f64 = self.rng.sample(StandardNormal);
                *acc += z * self.vehicles[i].accel_noise_sd;
            }
        }

        let length = self.track.length;
        for (v, acc) in self.vehicles.iter_mut().zip(&accel) {
            v.speed = (v.speed + acc * dt).clamp(0.0, v.idm.desired_speed);
            let advance = v.speed * dt;
            v.position = wrap_position(v.position + advance, length);
            v.cumulative_distance += advance;
        }
        let cav = self.cav();
        let laps_after = (cav.cumulative_distance / length).floor();
        let laps_before = ((cav.cumulative_distance - cav.speed * dt) / length).floor();
        events.cav_loop_completed = laps_after > laps_before;

        let cav_index = self.cav_index;
        if self.cav_can_change(cav_action) {
            let target = cav_action
                .target_lane(self.cav().lane, self.track.num_lanes)
                .expect("checked by cav_can_change");
            self.start_maneuver(cav_index, target);
            events.cav_lane_change_initiated = true;
        }
        if self.lane_change.enabled {
            for i in 0..n {
                if self.vehicles[i].kind != VehicleKind::Hdv {
                    continue;
                }
                let choice = hdv_lane_change_decision(self, i);
                if let Some(target) = choice
                    .is_lane_change()
                    .then(|| choice.target_lane(self.vehicles[i].lane, self.track.num_lanes))
                    .flatten()
                {
                    self.start_maneuver(i, target);
                }
            }
        }

        let cooldown = self.lane_change.cooldown;
        for v in self.vehicles.iter_mut() {
            v.lc_cooldown = (v.lc_cooldown - dt).max(0.0);
            if let Maneuver::Changing {
                from_lane,
                target_lane,
                remaining_steps,
                total_steps,
            } = v.maneuver
            {
                let remaining = remaining_steps - 1;
                let elapsed = total_steps - remaining;
                if elapsed == total_steps.div_ceil(2) {
                    v.lane = target_lane;
                }
                if remaining == 0 {
                    v.lane = target_lane;
                    v.maneuver = Maneuver::None;
                    if v.kind == VehicleKind::Cav {
                        events.cav_lane_change_completed = true;
                    } else {
                        v.lc_cooldown = cooldown;
                    }
                } else {
                    v.maneuver = Maneuver::Changing {
                        from_lane,
                        target_lane,
                        remaining_steps: remaining,
                        total_steps,
                    };
                }
            }
        }

        events.collisions = self.detect_collisions();
        for &(a, b) in &events.collisions {
            self.vehicles[a].speed = 0.0;
            self.vehicles[b].speed = 0.0;
        }
        events.collision = events
            .collisions
            .iter()
            .copied()
            .find(|&(a, b)| a == cav_index || b == cav_index)
            .or_else(|| events.collisions.first().copied());

        self.step_count += 1;
        events
    }

    /// All pairs sharing a lane whose bodies overlap, ids ascending.
    pub fn detect_collisions(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, a) in self.vehicles.iter().enumerate() {
            for b in self.vehicles.iter().skip(i + 1) {
                if !a.shares_lane_with(b) {
                    continue;
                }
                if ring_gap(a, b, &self.track) < 0.0 || ring_gap(b, a, &self.track) < 0.0 {
                    pairs.push((a.id.min(b.id), a.id.max(b.id)));
                }
            }
        }
        pairs
    }
}
