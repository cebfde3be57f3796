use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvSpec, Environment, EpisodeClock, Observation, StepResult};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const HALF_POLE_LENGTH: f64 = 0.5;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

/// Classic cart-pole balancing with Euler integration. Action 0 pushes left,
/// action 1 pushes right; every step pays +1 until the pole falls or the cart
/// leaves the track.
#[derive(Debug, Clone)]
pub struct Cartpole {
    state: [f64; 4],
    clock: EpisodeClock,
    spec: EnvSpec,
}

impl Default for Cartpole {
    fn default() -> Self {
        Self::new()
    }
}

impl Cartpole {
    pub fn new() -> Self {
        Self::with_time_limit(500)
    }

    pub fn with_time_limit(max_episode_length: usize) -> Self {
        Self {
            state: [0.0; 4],
            clock: EpisodeClock::default(),
            spec: EnvSpec {
                name: "cartpole".into(),
                observation_dim: 4,
                num_actions: 2,
                max_episode_length,
            },
        }
    }
}

impl Environment for Cartpole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in &mut self.state {
            *x = rng.random_range(-0.05..0.05);
        }
        self.clock.restart();
        Observation::new(self.state.to_vec())
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.clock.check(action, &self.spec)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE } else { -FORCE };
        let (sin, cos) = theta.sin_cos();
        let total_mass = MASS_CART + MASS_POLE;
        let pole_mass_length = MASS_POLE * HALF_POLE_LENGTH;
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_POLE_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        let terminal = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let truncated = self.clock.advance(terminal, &self.spec);
        Ok(StepResult {
            observation: Observation::new(self.state.to_vec()),
            reward: 1.0,
            terminal,
            truncated,
            executed_action: action,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_push_topples_the_pole() {
        let mut env = Cartpole::new();
        env.reset(3);
        let mut steps = 0;
        loop {
            let r = env.step(1).unwrap();
            steps += 1;
            if r.done() {
                assert!(r.terminal);
                break;
            }
        }
        assert!(steps < 100, "took {steps}");
    }

    #[test]
    fn reset_is_seeded() {
        let mut a = Cartpole::new();
        let mut b = Cartpole::new();
        assert_eq!(a.reset(9), b.reset(9));
        assert_ne!(a.reset(9), b.reset(10));
    }
}
