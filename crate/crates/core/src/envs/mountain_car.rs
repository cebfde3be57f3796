use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvSpec, Environment, EpisodeClock, Observation, StepResult};

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POSITION: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

/// Under-powered car in a valley. Actions push left / coast / push right;
/// every step costs -1 until the car reaches the flag on the right hill.
#[derive(Debug, Clone)]
pub struct MountainCar {
    position: f64,
    velocity: f64,
    clock: EpisodeClock,
    spec: EnvSpec,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl MountainCar {
    pub fn new() -> Self {
        Self::with_time_limit(1000)
    }

    pub fn with_time_limit(max_episode_length: usize) -> Self {
        Self {
            position: -0.5,
            velocity: 0.0,
            clock: EpisodeClock::default(),
            spec: EnvSpec {
                name: "mountain_car".into(),
                observation_dim: 2,
                num_actions: 3,
                max_episode_length,
            },
        }
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = rng.random_range(-0.6..-0.4);
        self.velocity = 0.0;
        self.clock.restart();
        Observation::new(vec![self.position, self.velocity])
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.clock.check(action, &self.spec)?;
        let push = action as f64 - 1.0;
        self.velocity += push * FORCE - (3.0 * self.position).cos() * GRAVITY;
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(MIN_POSITION, MAX_POSITION);
        if self.position <= MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        let terminal = self.position >= GOAL_POSITION;
        let truncated = self.clock.advance(terminal, &self.spec);
        Ok(StepResult {
            observation: Observation::new(vec![self.position, self.velocity]),
            reward: -1.0,
            terminal,
            truncated,
            executed_action: action,
        })
    }
}
