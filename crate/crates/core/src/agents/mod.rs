//! Training losses and update rules: DQN and Double DQN, behavior value
//! estimation, ranking regularization, behavior cloning (plain and
//! filtered), Monte-Carlo regression, CQL, and n-step targets.

mod loss;
mod online;
mod targets;
mod train;

pub use loss::{
    bc_loss, compute_loss, mc_loss, ranking_loss, ranking_loss_terms, success_weight, LossBreakdown, Minibatch, Sample,
};
pub use online::{OnlineDqn, OnlineDqnConfig};
pub use targets::{bve_target, dqn_target, n_step_target, Bootstrap};
pub use train::{OptimizerConfig, StepReport, TrainConfig, TrainOutcome, Trainer};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::NetError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no record contributes to the loss")]
    EmptyEffectiveBatch,
    #[error("window is not a contiguous run of one episode")]
    WindowNotContiguous,
    #[error("divergence detected at step {step} (max |param| = {max_abs_param})")]
    DivergenceDetected { step: usize, max_abs_param: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda_rank: f64,
    pub margin_nu: f64,
    pub beta_temp: f64,
    pub n_step: usize,
    pub cql_alpha: f64,
    /// Double-Q targets for plain `Dqn` mode; `Ddqn`, `RDqn` and `Cql`
    /// always use them.
    pub double_dqn: bool,
    /// Upper clip of the success weight.
    pub weight_clip: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_rank: 0.005,
            margin_nu: 0.05,
            beta_temp: 0.5,
            n_step: 1,
            cql_alpha: 0.01,
            double_dqn: false,
            weight_clip: 20.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.lambda_rank < 0.0 || self.margin_nu < 0.0 || self.cql_alpha < 0.0 {
            return bad("lambda, nu and alpha must be non-negative");
        }
        if self.beta_temp <= 0.0 || self.n_step == 0 || self.weight_clip <= 0.0 {
            return bad("beta and the weight clip must be positive and n_step at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "dqn")]
    Dqn,
    #[serde(rename = "ddqn")]
    Ddqn,
    #[serde(rename = "r-dqn")]
    RDqn,
    #[serde(rename = "bve")]
    Bve,
    #[serde(rename = "r-bve")]
    RBve,
    #[serde(rename = "bc")]
    Bc,
    #[serde(rename = "filtered-bc")]
    FilteredBc,
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "cql")]
    Cql,
}

impl Mode {
    pub const ALL: [Mode; 9] =
        [Mode::Dqn, Mode::Ddqn, Mode::RDqn, Mode::Bve, Mode::RBve, Mode::Bc, Mode::FilteredBc, Mode::Mc, Mode::Cql];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Dqn => "dqn",
            Mode::Ddqn => "ddqn",
            Mode::RDqn => "r-dqn",
            Mode::Bve => "bve",
            Mode::RBve => "r-bve",
            Mode::Bc => "bc",
            Mode::FilteredBc => "filtered-bc",
            Mode::Mc => "mc",
            Mode::Cql => "cql",
        }
    }

    /// Bootstrap rule of the TD term, `None` for non-TD losses.
    pub fn bootstrap(self, cfg: &LossConfig) -> Option<Bootstrap> {
        match self {
            Mode::Dqn => Some(Bootstrap::Max { double: cfg.double_dqn }),
            Mode::Ddqn | Mode::RDqn | Mode::Cql => Some(Bootstrap::Max { double: true }),
            Mode::Bve | Mode::RBve => Some(Bootstrap::Logged),
            Mode::Bc | Mode::FilteredBc | Mode::Mc => None,
        }
    }

    pub fn ranked(self) -> bool {
        matches!(self, Mode::RDqn | Mode::RBve)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        let key = match key.as_str() {
            "rdqn" => "r-dqn",
            "rbve" => "r-bve",
            "filteredbc" | "fbc" => "filtered-bc",
            other => other,
        };
        Mode::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| format!("unknown mode `{s}`"))
    }
}
