//! Warm-up plus ε-greedy training loop with resumable state.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{from_versioned_json, write_atomic, Checkpoint, CHECKPOINT_VERSION};
use crate::action::Action;
use crate::agent::{q_values, select_action, AgentConfig, Learner, ReplayBuffer, Transition};
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::QNetwork;
use crate::observe::Observation;

pub const TRAINER_STATE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Random-action transitions collected before learning starts.
    pub warmup_steps: u64,
    /// Environment steps in total, warm-up included.
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            warmup_steps: 500_000,
            total_steps: 1_000_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Laptop-sized profile: 2×10⁴ warm-up and 10⁵ learning steps with 30 vehicles.
    pub fn desk(seed: u64) -> Self {
        let mut c = Self {
            warmup_steps: 20_000,
            total_steps: 120_000,
            seed,
            ..Self::default()
        };
        c.env.sim.n_vehicles = 30;
        c.agent.replay_capacity = 120_000;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.total_steps < self.warmup_steps {
            return Err(Error::Config(format!(
                "total_steps {} is smaller than warmup_steps {}",
                self.total_steps, self.warmup_steps
            )));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::from_json(text, &e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Environment step index (0-based) this row belongs to.
    pub step: u64,
    pub loss: Option<f64>,
    pub epsilon: f64,
    /// Return of the episode that ended at this step.
    pub episode_return: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    version: u32,
    pub config: TrainConfig,
    pub learner: Learner,
    pub buffer: ReplayBuffer,
    pub env: Env,
    rng: ChaCha8Rng,
    /// Environment steps taken so far.
    pub step: u64,
    episode_return: f64,
    pub log: Vec<LogRow>,
    /// Online network as it stood when warm-up ended.
    pub warmup_snapshot: Option<QNetwork>,
}

fn random_legal_action<R: Rng + ?Sized>(obs: &Observation, rng: &mut R) -> Action {
    let legal: Vec<Action> = obs.legal_actions().collect();
    legal[rng.random_range(0..legal.len())]
}

impl Trainer {
    pub fn new(mut config: TrainConfig) -> Result<Self> {
        config.env.seed = config.seed;
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let learner = Learner::new(config.agent, &mut init_rng);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ac71);
        let env = Env::new(config.env.clone())?;
        let buffer = ReplayBuffer::new(config.agent.replay_capacity);
        let mut t = Self {
            version: TRAINER_STATE_VERSION,
            config,
            learner,
            buffer,
            env,
            rng,
            step: 0,
            episode_return: 0.0,
            log: Vec::new(),
            warmup_snapshot: None,
        };
        t.snapshot_if_warm();
        Ok(t)
    }

    fn snapshot_if_warm(&mut self) {
        if self.warmup_snapshot.is_none() && self.step >= self.config.warmup_steps {
            self.warmup_snapshot = Some(self.learner.pair.online.clone());
        }
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.config.warmup_steps
    }

    /// One environment step plus, after warm-up, one gradient step.
    pub fn step_once(&mut self) -> Result<()> {
        let obs = self.env.observation().clone();
        let warm = self.in_warmup();
        let (action, epsilon) = if warm {
            (random_legal_action(&obs, &mut self.rng), 1.0)
        } else {
            let cfg = &self.learner.config;
            let q = q_values(&obs, &self.learner.pair.online, cfg.pooling)?;
            (select_action(&q, &obs.action_mask, cfg.epsilon, &mut self.rng), cfg.epsilon)
        };
        let out = self.env.step(action)?;
        self.episode_return += out.reward;
        self.buffer.push(Transition {
            obs,
            action: out.applied,
            reward: out.reward,
            next_obs: out.obs,
            done: out.terminal,
        });
        let loss = if warm {
            None
        } else {
            self.learner.train_step(&self.buffer, &mut self.rng)?
        };
        let episode_return = if out.done {
            let r = self.episode_return;
            self.episode_return = 0.0;
            self.env.reset()?;
            Some(r)
        } else {
            None
        };
        if loss.is_some() || episode_return.is_some() {
            self.log.push(LogRow {
                step: self.step,
                loss,
                epsilon,
                episode_return,
            });
        }
        self.step += 1;
        self.snapshot_if_warm();
        Ok(())
    }

    /// Runs until `step` reaches `target` (capped at the budget).
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        let target = target.min(self.config.total_steps);
        while self.step < target {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.total_steps)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.loss).collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            online: self.learner.pair.online.clone(),
            target: self.learner.pair.target.clone(),
            agent: self.learner.config,
            env: self.config.env.clone(),
            train_steps: self.step,
            gradient_steps: self.learner.updates,
            seed_lineage: vec![self.config.seed],
        }
    }

    /// Checkpoint of the network frozen at the end of warm-up, if reached.
    pub fn warmup_checkpoint(&self) -> Option<Checkpoint> {
        let net = self.warmup_snapshot.clone()?;
        Some(Checkpoint {
            version: CHECKPOINT_VERSION,
            target: net.clone(),
            online: net,
            agent: self.learner.config,
            env: self.config.env.clone(),
            train_steps: self.config.warmup_steps,
            gradient_steps: 0,
            seed_lineage: vec![self.config.seed],
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_versioned_json(text, TRAINER_STATE_VERSION)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Writes the training log as CSV (`step,loss,epsilon,episode_return`).
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "loss", "epsilon", "episode_return"])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for row in &self.log {
            w.write_record([row.step.to_string(), opt(row.loss), row.epsilon.to_string(), opt(row.episode_return)])?;
        }
        w.flush()?;
        Ok(())
    }
}
