//! Episode lifecycle and reward accounting around the simulator and observation model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::observe::{observe, Observation, RangeConfig};
use crate::sim::{init_world, SimConfig, StepEvents, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// Bonus per completed loop.
    pub destination_bonus: f64,
    pub collision_penalty: f64,
    pub lane_change_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            destination_bonus: 100.0,
            collision_penalty: 200.0,
            lane_change_penalty: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w1,
            self.w2,
            self.w3,
            self.w4,
            self.destination_bonus,
            self.collision_penalty,
            self.lane_change_penalty,
        ];
        if all.iter().all(|x| *x >= 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("reward weights must be finite and nonnegative: {self:?}")))
        }
    }
}

/// Weighted reward terms of one step; `total = speed + destination - collision - lane_change`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub speed: f64,
    pub destination: f64,
    pub collision: f64,
    pub lane_change: f64,
    pub total: f64,
}

/// What the reward depends on in one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardEvents {
    pub loop_completed: bool,
    pub collided: bool,
    pub lane_change_initiated: bool,
}

impl RewardEvents {
    pub fn from_step(events: &StepEvents, cav_id: usize) -> Self {
        Self {
            loop_completed: events.cav_loop_completed,
            collided: events.cav_collided(cav_id),
            lane_change_initiated: events.cav_lane_change_initiated,
        }
    }
}

pub fn compute_reward(events: RewardEvents, v_cav: f64, v_max: f64, w: &RewardWeights) -> RewardBreakdown {
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    let speed = w.w1 * (v_cav / v_max);
    let destination = w.w2 * w.destination_bonus * indicator(events.loop_completed);
    let collision = w.w3 * w.collision_penalty * indicator(events.collided);
    let lane_change = w.w4 * w.lane_change_penalty * indicator(events.lane_change_initiated);
    RewardBreakdown {
        speed,
        destination,
        collision,
        lane_change,
        total: speed + destination - collision - lane_change,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub ranges: RangeConfig,
    pub episode_max_steps: u64,
    pub reward: RewardWeights,
    pub terminate_on_collision: bool,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            ranges: RangeConfig::default(),
            episode_max_steps: 1200,
            reward: RewardWeights::default(),
            terminate_on_collision: true,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.ranges.validate()?;
        self.reward.validate()?;
        if self.episode_max_steps == 0 {
            return Err(Error::Config("episode_max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::from_json(text, &e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Same configuration with a different total vehicle count.
    pub fn with_vehicles(&self, n_vehicles: usize) -> Self {
        let mut c = self.clone();
        c.sim.n_vehicles = n_vehicles;
        c
    }

    /// Same configuration with a different connectivity range.
    pub fn with_connectivity(&self, connectivity: f64) -> Self {
        let mut c = self.clone();
        c.ranges.connectivity = connectivity;
        c
    }
}

/// Deterministic per-episode seed.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = base ^ episode.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    /// The episode is over (time limit or terminating collision).
    pub done: bool,
    /// The episode ended in a terminal state rather than by the time limit.
    pub terminal: bool,
    /// Action the simulator received after illegal requests were degraded.
    pub applied: Action,
    pub events: StepEvents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Env {
    config: EnvConfig,
    world: WorldState,
    obs: Observation,
    steps: u64,
    done: bool,
    /// Episodes started through [`Env::reset`].
    episodes: u64,
}

impl Env {
    /// Builds the environment and starts episode 0.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let seed = episode_seed(config.seed, 0);
        let world = init_world(&config.sim, seed)?;
        let obs = observe(&world, &config.ranges);
        Ok(Self {
            config,
            world,
            obs,
            steps: 0,
            done: false,
            episodes: 1,
        })
    }

    /// Starts the next episode in this environment's seed sequence.
    pub fn reset(&mut self) -> Result<&Observation> {
        let seed = episode_seed(self.config.seed, self.episodes);
        self.episodes += 1;
        self.reset_with_seed(seed)
    }

    pub fn reset_with_seed(&mut self, seed: u64) -> Result<&Observation> {
        self.world = init_world(&self.config.sim, seed)?;
        self.obs = observe(&self.world, &self.config.ranges);
        self.steps = 0;
        self.done = false;
        Ok(&self.obs)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Changes the observation window; takes effect from the current observation on.
    pub fn set_ranges(&mut self, ranges: RangeConfig) -> Result<()> {
        ranges.validate()?;
        self.config.ranges = ranges;
        self.obs = observe(&self.world, &ranges);
        Ok(())
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode; call reset first".into()));
        }
        let applied = if self.world.cav_can_change(action) {
            action
        } else {
            Action::KeepLane
        };
        let events = self.world.step(applied);
        self.steps += 1;
        let cav = self.world.cav();
        let reward_events = RewardEvents::from_step(&events, cav.id);
        let breakdown = compute_reward(reward_events, cav.speed, self.config.sim.track.speed_limit, &self.config.reward);
        let terminal = reward_events.collided && self.config.terminate_on_collision;
        self.done = terminal || self.steps >= self.config.episode_max_steps;
        self.obs = observe(&self.world, &self.config.ranges);
        Ok(StepOutcome {
            obs: self.obs.clone(),
            reward: breakdown.total,
            breakdown,
            done: self.done,
            terminal,
            applied,
            events,
        })
    }
}
