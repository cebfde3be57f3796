use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_loss, LossConfig, Minibatch, Mode, Sample};
use crate::datastore::{BehaviorPolicy, LoggedStep, TransitionRecord};
use crate::envs::Observation;
use crate::neuralnet::{Adam, AdamConfig, Optimizer, QNetwork};
use crate::tabular::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineDqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub min_replay: usize,
    pub target_update_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
}

impl Default for OnlineDqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![56, 56],
            learning_rate: 1e-3,
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            min_replay: 100,
            target_update_period: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: 1_000,
        }
    }
}

/// Epsilon-greedy DQN that learns from replay while it acts, so the data it
/// logs comes from a policy that improves over the run.
pub struct OnlineDqn {
    cfg: OnlineDqnConfig,
    online: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    replay: VecDeque<TransitionRecord>,
    rng: ChaCha8Rng,
    env_steps: usize,
    updates: usize,
    failed_updates: usize,
}

impl OnlineDqn {
    pub fn new(observation_dim: usize, num_actions: usize, cfg: OnlineDqnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::mlp(observation_dim, num_actions, &cfg.hidden, &mut rng);
        let optimizer = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() }, online.network());
        Self {
            target: online.snapshot(),
            online,
            optimizer,
            replay: VecDeque::with_capacity(cfg.replay_capacity),
            rng,
            env_steps: 0,
            updates: 0,
            failed_updates: 0,
            cfg,
        }
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`.
    pub fn epsilon(&self) -> f64 {
        let frac = self.env_steps as f64 / self.cfg.epsilon_decay_steps.max(1) as f64;
        if frac >= 1.0 {
            return self.cfg.epsilon_end;
        }
        self.cfg.epsilon_start + frac * (self.cfg.epsilon_end - self.cfg.epsilon_start)
    }

    pub fn network(&self) -> &QNetwork {
        &self.online
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn failed_updates(&self) -> usize {
        self.failed_updates
    }

    fn learn(&mut self) {
        let n = self.replay.len();
        let mut draws: Vec<usize> = (0..self.cfg.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        draws.sort_unstable();
        draws.dedup();
        let samples = draws.iter().map(|&i| Sample { window: std::slice::from_ref(&self.replay[i]), count: 1 }).collect();
        let batch = Minibatch::new(samples).expect("non-empty");
        let loss_cfg = LossConfig { gamma: self.cfg.gamma, ..LossConfig::default() };
        let Ok((_, grads)) = compute_loss(&self.online, &self.target, &batch, &loss_cfg, Mode::Dqn, None) else {
            self.failed_updates += 1;
            return;
        };
        if self.optimizer.step(self.online.network_mut(), &grads).is_err() {
            self.failed_updates += 1;
            return;
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_update_period) {
            self.target = self.online.snapshot();
        }
    }
}

impl BehaviorPolicy for OnlineDqn {
    fn act(&mut self, observation: &Observation) -> usize {
        let eps = self.epsilon();
        if self.rng.random::<f64>() < eps {
            self.rng.random_range(0..self.online.num_actions())
        } else {
            argmax(&self.online.q_values(observation).expect("observation width"))
        }
    }

    fn observe(&mut self, step: &LoggedStep<'_>) {
        self.env_steps += 1;
        if self.replay.len() == self.cfg.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(TransitionRecord {
            episode_id: 0,
            t: 0,
            state: step.state.clone(),
            action: step.action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            next_action: None,
            terminal: step.terminal,
            return_to_go: 0.0,
            episode_return: 0.0,
        });
        if self.replay.len() >= self.cfg.min_replay {
            self.learn();
        }
    }

    fn describe(&self) -> String {
        format!(
            "online epsilon-greedy DQN (lr {}, batch {}, epsilon {} -> {} over {} steps, target period {})",
            self.cfg.learning_rate,
            self.cfg.batch_size,
            self.cfg.epsilon_start,
            self.cfg.epsilon_end,
            self.cfg.epsilon_decay_steps,
            self.cfg.target_update_period
        )
    }
}
