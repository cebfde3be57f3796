use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetError, EpisodeLog};
use crate::envs::{Environment, Observation};

/// One executed step as seen by a learning behavior policy.
#[derive(Debug, Clone, Copy)]
pub struct LoggedStep<'a> {
    pub state: &'a Observation,
    /// The action the environment applied (after any action noise).
    pub action: usize,
    pub reward: f64,
    pub next_state: &'a Observation,
    pub terminal: bool,
    pub truncated: bool,
}

/// The policy that generates a dataset. It may keep learning while it acts.
pub trait BehaviorPolicy {
    fn act(&mut self, observation: &Observation) -> usize;

    fn observe(&mut self, _step: &LoggedStep<'_>) {}

    fn end_episode(&mut self) {}

    fn describe(&self) -> String;
}

impl<P: BehaviorPolicy + ?Sized> BehaviorPolicy for &mut P {
    fn act(&mut self, observation: &Observation) -> usize {
        (**self).act(observation)
    }
    fn observe(&mut self, step: &LoggedStep<'_>) {
        (**self).observe(step)
    }
    fn end_episode(&mut self) {
        (**self).end_episode()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone)]
pub struct UniformPolicy {
    num_actions: usize,
    rng: ChaCha8Rng,
}

impl UniformPolicy {
    pub fn new(num_actions: usize, seed: u64) -> Self {
        Self { num_actions, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl BehaviorPolicy for UniformPolicy {
    fn act(&mut self, _: &Observation) -> usize {
        self.rng.random_range(0..self.num_actions)
    }

    fn describe(&self) -> String {
        format!("uniform over {} actions", self.num_actions)
    }
}

/// Always proposes the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub usize);

impl BehaviorPolicy for FixedPolicy {
    fn act(&mut self, _: &Observation) -> usize {
        self.0
    }

    fn describe(&self) -> String {
        format!("fixed action {}", self.0)
    }
}

/// Rolls out `num_episodes` episodes and records every executed transition.
/// Episode `i` resets the environment with the `i`-th draw of a generator
/// seeded by `seed`.
pub fn log_episodes<E, P>(
    env: &mut E,
    policy: &mut P,
    num_episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<Dataset, DatasetError>
where
    E: Environment + ?Sized,
    P: BehaviorPolicy + ?Sized,
{
    if num_episodes == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(num_episodes);
    for episode_id in 0..num_episodes as u32 {
        let mut state = env.reset(seeds.next_u64());
        let mut log = EpisodeLog {
            episode_id,
            states: vec![state.clone()],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: false,
            final_next_action: None,
        };
        loop {
            let proposed = policy.act(&state);
            let result = env.step(proposed)?;
            policy.observe(&LoggedStep {
                state: &state,
                action: result.executed_action,
                reward: result.reward,
                next_state: &result.observation,
                terminal: result.terminal,
                truncated: result.truncated,
            });
            log.actions.push(result.executed_action);
            log.rewards.push(result.reward);
            log.states.push(result.observation.clone());
            let done = result.done();
            log.terminal = result.terminal;
            state = result.observation;
            if done {
                break;
            }
        }
        policy.end_episode();
        logs.push(log);
    }
    Dataset::from_logs(env.spec().clone(), gamma, env.action_noise(), policy.describe(), logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ActionNoise, Catch, ChainMdp, CHAIN_LEFT, CHAIN_RIGHT};

    #[test]
    fn uniform_chain_two_ends_with_unit_return_to_go() {
        let d = log_episodes(&mut ChainMdp::new(2), &mut UniformPolicy::new(2, 4), 1, 0.9, 0).unwrap();
        let ep = &d.episodes()[0];
        let last = ep.last().unwrap();
        assert!(last.terminal && last.return_to_go == 1.0);
        for pair in ep.windows(2) {
            assert_eq!(pair[0].return_to_go, pair[0].reward + 0.9 * pair[1].return_to_go);
        }
    }

    #[test]
    fn right_policy_undiscounted_return_to_go_is_one() {
        let d = log_episodes(&mut ChainMdp::new(4), &mut FixedPolicy(CHAIN_RIGHT), 1, 1.0, 0).unwrap();
        assert_eq!(d.num_transitions(), 4);
        assert!(d.records().all(|r| r.return_to_go == 1.0));
    }

    #[test]
    fn noisy_logging_stores_executed_actions() {
        let mut env = ActionNoise::new(ChainMdp::new(5), 0.5, 9).unwrap();
        let d = log_episodes(&mut env, &mut FixedPolicy(CHAIN_RIGHT), 5, 0.99, 1).unwrap();
        assert_eq!(d.header().noise_epsilon, 0.5);
        assert!(d.records().any(|r| r.action == CHAIN_LEFT));
        d.validate().unwrap();
    }

    #[test]
    fn catch_episodes_have_nine_steps() {
        let d = log_episodes(&mut Catch::new(), &mut UniformPolicy::new(3, 2), 20, 0.99, 3).unwrap();
        assert_eq!(d.num_transitions(), 180);
        assert!(d.records().filter(|r| r.terminal).count() == 20);
    }
}
