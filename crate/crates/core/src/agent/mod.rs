//! Spatially weighted Deep-Set Q agent.
//!
//! Every feature row (downstream vehicles, the three local lane summaries and the CAV vector) is
//! embedded by one shared encoder φ. Downstream embeddings are pooled with distance-based weights
//! that sum to one, so the pooled vector stays on the scale of a single embedding however many
//! vehicles are connected. The five 32-wide blocks are concatenated and fed to the Q head ρ.

mod learner;
mod model;
mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use learner::{targets_from_q, td_targets, Learner, TargetRule};
pub use model::{embed_downstream, encode_state, q_values, q_values_batch, BatchForward};
pub use replay::{ReplayBuffer, Transition};

pub use crate::action::Action;
use crate::error::{Error, Result};
use crate::neural::TargetUpdate;
use crate::observe::{raw_weights, weights, WeightScheme};

/// How downstream embeddings are pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pooling {
    /// Weighted sum with weights normalized to one.
    Weighted(WeightScheme),
    /// Plain sum of embeddings (unnormalized Deep Sets).
    UnnormalizedSum,
}

impl Pooling {
    pub fn weights(&self, dx: &[f64]) -> Vec<f64> {
        match *self {
            Pooling::Weighted(scheme) => weights(dx, scheme),
            Pooling::UnnormalizedSum => raw_weights(dx, WeightScheme::Uniform),
        }
    }
}

impl Default for Pooling {
    fn default() -> Self {
        Pooling::Weighted(WeightScheme::Linear)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Exploration probability while training.
    pub epsilon: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub target_update: TargetUpdate,
    pub target_rule: TargetRule,
    pub pooling: Pooling,
    pub replay_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon: 0.3,
            batch_size: 32,
            learning_rate: 1e-4,
            target_update: TargetUpdate::default(),
            target_rule: TargetRule::DoubleQ,
            pooling: Pooling::default(),
            replay_capacity: 500_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("batch size must be positive and fit in the replay buffer".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        match self.target_update {
            TargetUpdate::Soft { tau } if !(0.0..=1.0).contains(&tau) => {
                Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")))
            }
            TargetUpdate::Hard { period: 0 } => Err(Error::Config("hard update period must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// ε-greedy choice among unmasked actions; greedy ties go to the lowest action index.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; 3], mask: &[bool; 3], epsilon: f64, rng: &mut R) -> Action {
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        let legal: Vec<Action> = Action::ALL.into_iter().filter(|a| mask[a.index()]).collect();
        if !legal.is_empty() {
            return legal[rng.random_range(0..legal.len())];
        }
    }
    greedy_action(q, mask)
}

pub fn greedy_action(q: &[f64; 3], mask: &[bool; 3]) -> Action {
    let mut best: Option<Action> = None;
    for a in Action::ALL {
        if mask[a.index()] && best.is_none_or(|b| q[a.index()] > q[b.index()]) {
            best = Some(a);
        }
    }
    best.unwrap_or(Action::KeepLane)
}
