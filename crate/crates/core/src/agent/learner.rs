use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{q_values_batch, BatchForward};
use super::{AgentConfig, Pooling, ReplayBuffer, Transition};
use crate::error::Result;
use crate::neural::{AdamState, NetworkPair, QNetwork, TargetUpdate};
use crate::observe::Observation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRule {
    /// `r + γ·max_a Q_target(s′, a)`.
    VanillaMax,
    /// `r + γ·Q_target(s′, argmax_a Q_online(s′, a))`.
    DoubleQ,
}

fn masked_argmax(q: &[f64], mask: &[bool; 3]) -> usize {
    let mut best: Option<usize> = None;
    for a in 0..3 {
        if mask[a] && best.is_none_or(|b| q[a] > q[b]) {
            best = Some(a);
        }
    }
    best.unwrap_or(1)
}

/// TD targets from precomputed next-state Q tables (`batch × 3`).
///
/// `q_online_next` is only read by [`TargetRule::DoubleQ`].
pub fn targets_from_q(
    rewards: &[f64],
    dones: &[bool],
    masks: &[[bool; 3]],
    q_target_next: &Array2<f64>,
    q_online_next: &Array2<f64>,
    gamma: f64,
    rule: TargetRule,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|b| {
            if dones[b] {
                return rewards[b];
            }
            let target_row = q_target_next.row(b);
            let target_row = target_row.as_slice().expect("standard layout");
            let chosen = match rule {
                TargetRule::VanillaMax => masked_argmax(target_row, &masks[b]),
                TargetRule::DoubleQ => {
                    let online_row = q_online_next.row(b);
                    masked_argmax(online_row.as_slice().expect("standard layout"), &masks[b])
                }
            };
            rewards[b] + gamma * target_row[chosen]
        })
        .collect()
}

/// TD targets for a batch of transitions.
pub fn td_targets(
    batch: &[&Transition],
    pair: &NetworkPair,
    gamma: f64,
    rule: TargetRule,
    pooling: Pooling,
) -> Result<Vec<f64>> {
    let next: Vec<&Observation> = batch.iter().map(|t| &t.next_obs).collect();
    let q_target = q_values_batch(&pair.target, &next, pooling)?;
    let q_online = match rule {
        TargetRule::DoubleQ => q_values_batch(&pair.online, &next, pooling)?,
        TargetRule::VanillaMax => Array2::zeros((0, 3)),
    };
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
    let masks: Vec<[bool; 3]> = batch.iter().map(|t| t.next_obs.action_mask).collect();
    Ok(targets_from_q(&rewards, &dones, &masks, &q_target, &q_online, gamma, rule))
}

/// Online/target networks with their optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub pair: NetworkPair,
    pub adam: AdamState,
    pub config: AgentConfig,
    /// Gradient steps taken so far.
    pub updates: u64,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Self {
        Self::from_network(config, QNetwork::new(rng))
    }

    pub fn from_network(config: AgentConfig, online: QNetwork) -> Self {
        let adam = AdamState::for_tensors(&online.tensors(), config.learning_rate);
        Self {
            pair: NetworkPair::new(online),
            adam,
            config,
            updates: 0,
        }
    }

    /// Mean squared TD error on the taken actions and its gradient w.r.t. the online network.
    pub fn loss_and_gradient(&self, batch: &[&Transition]) -> Result<(f64, QNetwork)> {
        let cfg = &self.config;
        let targets = td_targets(batch, &self.pair, cfg.gamma, cfg.target_rule, cfg.pooling)?;
        let obs: Vec<&Observation> = batch.iter().map(|t| &t.obs).collect();
        let fwd = BatchForward::run(&self.pair.online, &obs, cfg.pooling)?;
        let b = batch.len() as f64;
        let mut q_grad = Array2::<f64>::zeros(fwd.q.raw_dim());
        let mut loss = 0.0;
        for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
            let a = t.action.index();
            let diff = fwd.q[[i, a]] - y;
            loss += diff * diff;
            q_grad[[i, a]] = 2.0 * diff / b;
        }
        let grads = fwd.backward(&self.pair.online, q_grad.view())?;
        Ok((loss / b, grads))
    }

    /// One gradient step on a batch plus the target-network update.
    pub fn update_on(&mut self, batch: &[&Transition]) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradient(batch)?;
        let grads = grads.tensors();
        self.adam.step(self.pair.online.tensors_mut(), &grads)?;
        self.updates += 1;
        match self.config.target_update {
            TargetUpdate::Soft { tau } => self.pair.soft_update(tau)?,
            TargetUpdate::Hard { period } => {
                if self.updates % period == 0 {
                    self.pair.hard_update();
                }
            }
        }
        Ok(loss)
    }

    /// Samples a batch and trains on it; `None` when the buffer is smaller than a batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<f64>> {
        if buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch = buffer.sample(self.config.batch_size, rng)?;
        self.update_on(&batch).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::observe::WeightScheme;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
        let n = rng.random_range(0..6);
        Observation {
            downstream: (0..n)
                .map(|_| [rng.random_range(0.1..1.0), rng.random_range(-0.3..0.3), rng.random_range(-2..=2) as f64])
                .collect(),
            local: [
                [rng.random_range(-0.2..0.2), 0.0, -1.0],
                [rng.random_range(-0.2..0.2), 0.0, 0.0],
                [1.0, 0.0, 1.0],
            ],
            cav: [rng.random(), rng.random(), 0.5],
            action_mask: [true, true, rng.random_bool(0.5)],
        }
    }

    fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
        Transition {
            obs: random_obs(rng),
            action: Action::ALL[rng.random_range(0..3)],
            reward: rng.random_range(-1.0..1.0),
            next_obs: random_obs(rng),
            done: rng.random_bool(0.1),
        }
    }

    #[test]
    fn done_transitions_target_the_reward() {
        let q = array![[5.0, 6.0, 7.0]];
        let y = targets_from_q(&[-200.0], &[true], &[[true; 3]], &q, &q, 0.99, TargetRule::DoubleQ);
        assert_eq!(y, vec![-200.0]);
    }

    #[test]
    fn vanilla_max_target() {
        let q = array![[2.0, 1.0, 0.5]];
        let y = targets_from_q(&[1.0], &[false], &[[true; 3]], &q, &q, 0.99, TargetRule::VanillaMax);
        assert!((y[0] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn double_q_evaluates_online_choice_with_target() {
        let online = array![[3.0, 1.0, 2.0]];
        let target = array![[0.5, 1.0, 4.0]];
        let y = targets_from_q(&[0.0], &[false], &[[true; 3]], &target, &online, 1.0, TargetRule::DoubleQ);
        assert_eq!(y, vec![0.5]);
        let y = targets_from_q(&[0.0], &[false], &[[true; 3]], &target, &online, 1.0, TargetRule::VanillaMax);
        assert_eq!(y, vec![4.0]);
        // Masking the online favourite moves the choice to the next legal action.
        let y = targets_from_q(&[0.0], &[false], &[[false, true, true]], &target, &online, 1.0, TargetRule::DoubleQ);
        assert_eq!(y, vec![4.0]);
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair = NetworkPair::new(QNetwork::new(&mut rng));
        let transitions: Vec<Transition> = (0..16).map(|_| random_transition(&mut rng)).collect();
        let batch: Vec<&Transition> = transitions.iter().collect();
        for rule in [TargetRule::DoubleQ, TargetRule::VanillaMax] {
            let y = td_targets(&batch, &pair, 0.0, rule, Pooling::default()).unwrap();
            let r: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
            assert_eq!(y, r);
        }
    }

    #[test]
    fn single_transition_loss_is_squared_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let learner = Learner::new(AgentConfig::default(), &mut rng);
        let mut t = random_transition(&mut rng);
        t.done = true;
        let q = crate::agent::q_values(&t.obs, &learner.pair.online, Pooling::default()).unwrap();
        let d = q[t.action.index()] - t.reward;
        let (loss, _) = learner.loss_and_gradient(&[&t]).unwrap();
        assert!((loss - d * d).abs() < 1e-12);
    }

    #[test]
    fn matched_targets_leave_parameters_in_place() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut learner = Learner::new(AgentConfig::default(), &mut rng);
        let mut t = random_transition(&mut rng);
        t.done = true;
        let q = crate::agent::q_values(&t.obs, &learner.pair.online, Pooling::default()).unwrap();
        t.reward = q[t.action.index()];
        let before = learner.pair.online.clone();
        let loss = learner.update_on(&[&t]).unwrap();
        assert!(loss < 1e-24);
        for (a, b) in before.tensors().iter().zip(learner.pair.online.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn untaken_actions_receive_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let learner = Learner::new(AgentConfig::default(), &mut rng);
        let mut t = random_transition(&mut rng);
        t.action = Action::ChangeLeft;
        let (_, g) = learner.loss_and_gradient(&[&t]).unwrap();
        let last = g.rho.layers.last().unwrap();
        assert!(last.weight.row(1).iter().chain(last.weight.row(2).iter()).all(|&x| x == 0.0));
        assert_eq!(last.bias[1], 0.0);
        assert_eq!(last.bias[2], 0.0);
        assert_ne!(last.bias[0], 0.0);
    }

    #[test]
    fn insufficient_buffer_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut learner = Learner::new(AgentConfig::default(), &mut rng);
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..31 {
            buf.push(random_transition(&mut rng));
        }
        let before = learner.clone();
        assert_eq!(learner.train_step(&buf, &mut rng).unwrap(), None);
        assert_eq!(learner, before);
    }

    #[test]
    fn overfits_a_small_frozen_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = AgentConfig {
            learning_rate: 1e-3,
            pooling: Pooling::Weighted(WeightScheme::Linear),
            ..AgentConfig::default()
        };
        let mut learner = Learner::new(config, &mut rng);
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..100 {
            buf.push(random_transition(&mut rng));
        }
        let all: Vec<&Transition> = buf.iter().collect();
        let initial = learner.loss_and_gradient(&all).unwrap().0;
        for _ in 0..200 {
            learner.train_step(&buf, &mut rng).unwrap();
        }
        let last = learner.loss_and_gradient(&all).unwrap().0;
        assert!(last < initial, "{initial} -> {last}");
    }

    #[test]
    fn hard_update_copies_on_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let config = AgentConfig {
            target_update: TargetUpdate::Hard { period: 3 },
            batch_size: 4,
            ..AgentConfig::default()
        };
        let mut learner = Learner::new(config, &mut rng);
        let transitions: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng)).collect();
        let batch: Vec<&Transition> = transitions.iter().collect();
        learner.update_on(&batch).unwrap();
        learner.update_on(&batch).unwrap();
        assert_ne!(learner.pair.online, learner.pair.target);
        learner.update_on(&batch).unwrap();
        assert_eq!(learner.pair.online, learner.pair.target);
    }
}
