use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvSpec, Environment, Observation, StepResult};

/// Replaces the requested action with a uniformly drawn one with probability
/// `epsilon` before it reaches the wrapped dynamics. The action actually
/// applied is reported in [`StepResult::executed_action`].
#[derive(Debug, Clone)]
pub struct ActionNoise<E> {
    inner: E,
    epsilon: f64,
    rng: ChaCha8Rng,
    substitutions: u64,
    steps: u64,
}

impl<E: Environment> ActionNoise<E> {
    pub fn new(inner: E, epsilon: f64, seed: u64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(EnvError::InvalidNoise(epsilon));
        }
        Ok(Self {
            inner,
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(seed),
            substitutions: 0,
            steps: 0,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Number of steps whose action was replaced (the replacement may equal
    /// the requested action).
    pub fn substitutions(&self) -> u64 {
        self.substitutions
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl<E: Environment> Environment for ActionNoise<E> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let num_actions = self.inner.spec().num_actions;
        if action >= num_actions {
            return Err(EnvError::ActionOutOfRange { action, num_actions });
        }
        let mut executed = action;
        if self.epsilon > 0.0 && self.rng.random::<f64>() < self.epsilon {
            executed = self.rng.random_range(0..num_actions);
            self.substitutions += 1;
        }
        let result = self.inner.step(executed)?;
        self.steps += 1;
        Ok(result)
    }

    fn action_noise(&self) -> f64 {
        self.epsilon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Catch;

    fn trajectory(env: &mut dyn Environment, seeds: &[u64], actions: &[usize]) -> Vec<StepResult> {
        let mut out = Vec::new();
        for &seed in seeds {
            env.reset(seed);
            for &a in actions {
                let r = env.step(a).unwrap();
                let done = r.done();
                out.push(r);
                if done {
                    break;
                }
            }
        }
        out
    }

    #[test]
    fn zero_noise_is_identity() {
        let actions = [0, 2, 1, 1, 0, 2, 2, 0, 1, 1];
        let mut base = Catch::new();
        let mut wrapped = ActionNoise::new(Catch::new(), 0.0, 5).unwrap();
        assert_eq!(
            trajectory(&mut base, &[1, 2, 3], &actions),
            trajectory(&mut wrapped, &[1, 2, 3], &actions)
        );
        assert_eq!(wrapped.substitutions(), 0);
    }

    #[test]
    fn substitution_rate_matches_epsilon() {
        let mut env = ActionNoise::new(Catch::new(), 0.25, 42).unwrap();
        let mut seed = 0;
        env.reset(seed);
        while env.steps() < 100_000 {
            if env.step(1).unwrap().done() {
                seed += 1;
                env.reset(seed);
            }
        }
        let rate = env.substitutions() as f64 / env.steps() as f64;
        assert!((rate - 0.25).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn full_noise_is_uniform_regardless_of_input() {
        let mut env = ActionNoise::new(Catch::new(), 1.0, 3).unwrap();
        let mut counts = [0usize; 3];
        let mut seed = 0;
        env.reset(seed);
        for _ in 0..30_000 {
            let r = env.step(0).unwrap();
            counts[r.executed_action] += 1;
            if r.done() {
                seed += 1;
                env.reset(seed);
            }
        }
        for c in counts {
            let p = c as f64 / 30_000.0;
            assert!((p - 1.0 / 3.0).abs() < 0.015, "{counts:?}");
        }
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(ActionNoise::new(Catch::new(), 1.5, 0).is_err());
        assert!(ActionNoise::new(Catch::new(), -0.1, 0).is_err());
    }
}
