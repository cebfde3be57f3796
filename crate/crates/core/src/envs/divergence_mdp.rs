use super::{EnvError, EnvSpec, Environment, EpisodeClock, Observation, StepResult, TabularModel};
use crate::tabular::TabularMdp;

/// States of the four-state escape-to-infinity MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceState {
    S1,
    S2,
    S3,
    S4,
}

impl DivergenceState {
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_index(i: usize) -> Self {
        [Self::S1, Self::S2, Self::S3, Self::S4][i]
    }
}

/// Deterministic MDP whose only reward is `r(s1, a0) = 1`.
///
/// Each state is described by one real feature: `s1 = 0`, `s2 = 1`,
/// `s3 = beta`, and the terminal `s4 = -1`. Transitions:
///
/// | state | a0            | a1  | a2  |
/// |-------|---------------|-----|-----|
/// | s1    | s4 (r=1, end) | s2  | s3  |
/// | s2    | s3            | s3  | s3  |
/// | s3    | s4 (end)      | s4  | s4  |
#[derive(Debug, Clone)]
pub struct DivergenceMdp {
    beta: f64,
    state: DivergenceState,
    clock: EpisodeClock,
    spec: EnvSpec,
}

impl DivergenceMdp {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            state: DivergenceState::S1,
            clock: EpisodeClock::default(),
            spec: EnvSpec {
                name: "divergence".into(),
                observation_dim: 1,
                num_actions: 3,
                max_episode_length: 3,
            },
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn feature(&self, state: DivergenceState) -> f64 {
        match state {
            DivergenceState::S1 => 0.0,
            DivergenceState::S2 => 1.0,
            DivergenceState::S3 => self.beta,
            DivergenceState::S4 => -1.0,
        }
    }

    pub fn transition(state: DivergenceState, action: usize) -> (DivergenceState, f64) {
        use DivergenceState::*;
        match (state, action) {
            (S1, 0) => (S4, 1.0),
            (S1, 1) => (S2, 0.0),
            (S1, _) => (S3, 0.0),
            (S2, _) => (S3, 0.0),
            (S3, _) | (S4, _) => (S4, 0.0),
        }
    }
}

impl Environment for DivergenceMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.state = DivergenceState::S1;
        self.clock.restart();
        Observation::new(vec![self.feature(self.state)])
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.clock.check(action, &self.spec)?;
        let (next, reward) = Self::transition(self.state, action);
        self.state = next;
        let terminal = next == DivergenceState::S4;
        let truncated = self.clock.advance(terminal, &self.spec);
        Ok(StepResult {
            observation: Observation::new(vec![self.feature(next)]),
            reward,
            terminal,
            truncated,
            executed_action: action,
        })
    }
}

impl TabularModel for DivergenceMdp {
    fn tabular_model(&self, gamma: f64) -> TabularMdp {
        let mut b = TabularMdp::builder(4, 3, gamma).start(0).terminal(3);
        for s in 0..3 {
            for a in 0..3 {
                let (next, r) = Self::transition(DivergenceState::from_index(s), a);
                b = b.transition(s, a, next.index(), 1.0).reward(s, a, r);
            }
        }
        b.build().expect("divergence model is well formed")
    }

    fn observation_of(&self, state: usize) -> Observation {
        Observation::new(vec![self.feature(DivergenceState::from_index(state))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_emits_s1_feature() {
        let mut env = DivergenceMdp::new(2.0);
        assert_eq!(env.reset(11).as_slice(), &[0.0]);
    }

    #[test]
    fn only_s1_a0_is_rewarded() {
        let mut env = DivergenceMdp::new(2.0);
        env.reset(0);
        let r = env.step(0).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.terminal);

        use DivergenceState::*;
        for s in [S1, S2, S3] {
            for a in 0..3 {
                let (_, r) = DivergenceMdp::transition(s, a);
                let expected = if (s, a) == (S1, 0) { 1.0 } else { 0.0 };
                assert_eq!(r, expected);
            }
        }
    }

    #[test]
    fn optimal_path_features() {
        let mut env = DivergenceMdp::new(2.5);
        env.reset(0);
        assert_eq!(env.step(1).unwrap().observation.as_slice(), &[1.0]);
        assert_eq!(env.step(2).unwrap().observation.as_slice(), &[2.5]);
        let last = env.step(0).unwrap();
        assert!(last.terminal);
    }
}
