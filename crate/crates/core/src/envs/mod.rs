//! Discrete-action diagnostic environments.
//!
//! Every environment here is single-owner and fully determined by the seed
//! passed to [`Environment::reset`] plus the action sequence. Episodes always
//! end within [`EnvSpec::max_episode_length`] steps, either on a true terminal
//! transition or by time-limit truncation (reported through
//! [`StepResult::truncated`]).

mod cartpole;
mod catch;
mod chain;
mod divergence_mdp;
mod grid;
mod mountain_car;
mod noise;

pub use cartpole::Cartpole;
pub use catch::Catch;
pub use chain::{ChainMdp, CHAIN_LEFT, CHAIN_RIGHT};
pub use divergence_mdp::{DivergenceMdp, DivergenceState};
pub use grid::{GridCell, GridLayout, GridWorld, SHIPPED_GRID};
pub use mountain_car::MountainCar;
pub use noise::ActionNoise;

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::TabularMdp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range for {num_actions} actions")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("step called on a terminated episode; call reset first")]
    SteppedTerminalEnv,
    #[error("noise probability {0} outside [0, 1]")]
    InvalidNoise(f64),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
}

/// Feature vector describing one environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Self(features)
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Rounds every feature through single precision, the storage precision
    /// of dataset files.
    pub fn quantized(&self) -> Self {
        Self(self.0.iter().map(|&x| x as f32 as f64).collect())
    }
}

impl Deref for Observation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Observation {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
    /// Episode cut by the time limit without reaching a terminal state.
    pub truncated: bool,
    /// The action the dynamics actually applied. Differs from the requested
    /// action only under [`ActionNoise`].
    pub executed_action: usize,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub observation_dim: usize,
    pub num_actions: usize,
    pub max_episode_length: usize,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. All randomness of the episode's initial state
    /// derives from `seed`.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError>;

    /// Probability with which executed actions are replaced by uniform noise.
    fn action_noise(&self) -> f64 {
        0.0
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn reset(&mut self, seed: u64) -> Observation {
        (**self).reset(seed)
    }
    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }
    fn action_noise(&self) -> f64 {
        (**self).action_noise()
    }
}

/// Environments whose dynamics can be enumerated into an explicit finite MDP.
pub trait TabularModel {
    fn tabular_model(&self, gamma: f64) -> TabularMdp;
    /// Maps a tabular state index to the observation the environment emits.
    fn observation_of(&self, state: usize) -> Observation;
}

/// Step bookkeeping shared by all environments.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    done: bool,
    started: bool,
}

impl EpisodeClock {
    pub(crate) fn restart(&mut self) {
        self.steps = 0;
        self.done = false;
        self.started = true;
    }

    pub(crate) fn check(&self, action: usize, spec: &EnvSpec) -> Result<(), EnvError> {
        if !self.started || self.done {
            return Err(EnvError::SteppedTerminalEnv);
        }
        if action >= spec.num_actions {
            return Err(EnvError::ActionOutOfRange {
                action,
                num_actions: spec.num_actions,
            });
        }
        Ok(())
    }

    /// Advances the counter and returns the truncation flag.
    pub(crate) fn advance(&mut self, terminal: bool, spec: &EnvSpec) -> bool {
        self.steps += 1;
        let truncated = !terminal && self.steps >= spec.max_episode_length;
        self.done = terminal || truncated;
        truncated
    }
}

/// Builds one of the shipped environments by name.
///
/// Recognized names: `catch`, `chain:<n>`, `grid`, `divergence`,
/// `divergence:<beta>`, `cartpole`, `mountain_car`.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>, EnvError> {
    let (base, arg) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let bad = || EnvError::UnknownEnv(name.to_string());
    Ok(match base {
        "catch" => Box::new(Catch::new()),
        "chain" => {
            let n = arg.map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(5);
            if n < 2 {
                return Err(bad());
            }
            Box::new(ChainMdp::new(n))
        }
        "grid" => Box::new(GridWorld::shipped()),
        "divergence" => {
            let beta = arg.map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(2.0);
            Box::new(DivergenceMdp::new(beta))
        }
        "cartpole" => Box::new(Cartpole::new()),
        "mountain_car" => Box::new(MountainCar::new()),
        _ => return Err(bad()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_env_parses_arguments() {
        assert_eq!(make_env("chain:7").unwrap().spec().observation_dim, 7);
        assert_eq!(make_env("catch").unwrap().spec().num_actions, 3);
        assert!(make_env("chain:1").is_err());
        assert!(make_env("atari").is_err());
    }

    #[test]
    fn stepping_before_reset_fails() {
        let mut env = Catch::new();
        assert_eq!(env.step(0), Err(EnvError::SteppedTerminalEnv));
    }
}
