use super::{EnvError, EnvSpec, Environment, EpisodeClock, Observation, StepResult, TabularModel};
use crate::tabular::TabularMdp;

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

/// A chain of `n` states entered at the leftmost one. LEFT moves one state
/// left (staying put at the left end), RIGHT moves one state right. Both
/// actions taken in the rightmost state pay 1 and end the episode; every
/// other transition pays 0.
///
/// Observations are one-hot vectors of length `n`.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    n: usize,
    state: usize,
    clock: EpisodeClock,
    spec: EnvSpec,
}

impl ChainMdp {
    pub fn new(n: usize) -> Self {
        Self::with_time_limit(n, 10 * n * n)
    }

    pub fn with_time_limit(n: usize, max_episode_length: usize) -> Self {
        assert!(n >= 2, "chain needs at least two states");
        assert!(max_episode_length > 0);
        Self {
            n,
            state: 0,
            clock: EpisodeClock::default(),
            spec: EnvSpec {
                name: format!("chain:{n}"),
                observation_dim: n,
                num_actions: 2,
                max_episode_length,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn transition(&self, state: usize, action: usize) -> (Option<usize>, f64) {
        if state == self.n - 1 {
            return (None, 1.0);
        }
        let next = if action == CHAIN_RIGHT { state + 1 } else { state.saturating_sub(1) };
        (Some(next), 0.0)
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.state = 0;
        self.clock.restart();
        self.observation_of(0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.clock.check(action, &self.spec)?;
        let (next, reward) = self.transition(self.state, action);
        let terminal = next.is_none();
        if let Some(s) = next {
            self.state = s;
        }
        let truncated = self.clock.advance(terminal, &self.spec);
        Ok(StepResult {
            observation: self.observation_of(self.state),
            reward,
            terminal,
            truncated,
            executed_action: action,
        })
    }
}

impl TabularModel for ChainMdp {
    /// States `0..n` are the chain; state `n` is the absorbing terminal.
    fn tabular_model(&self, gamma: f64) -> TabularMdp {
        let n = self.n;
        let mut b = TabularMdp::builder(n + 1, 2, gamma).start(0).terminal(n);
        for s in 0..n {
            for a in 0..2 {
                let (next, r) = self.transition(s, a);
                b = b.transition(s, a, next.unwrap_or(n), 1.0).reward(s, a, r);
            }
        }
        b.build().expect("chain model is well formed")
    }

    fn observation_of(&self, state: usize) -> Observation {
        Observation::one_hot(self.n, state.min(self.n - 1))
    }
}
