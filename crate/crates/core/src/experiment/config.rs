use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::agents::{LossConfig, Mode, OnlineDqnConfig, OptimizerConfig, TrainConfig};
use crate::evaluation::EvalConfig;
use crate::neuralnet::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    /// An epsilon-greedy DQN that learns while it logs.
    OnlineDqn,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub env: String,
    pub episodes: usize,
    /// Probability that the executed action is replaced by a uniform one.
    pub noise_epsilon: f64,
    pub subsample_fraction: f64,
    pub gamma: f64,
    pub seed: u64,
    pub behavior: BehaviorKind,
    pub online: OnlineDqnConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            env: "catch".into(),
            episodes: 200,
            noise_epsilon: 0.25,
            subsample_fraction: 1.0,
            gamma: 0.99,
            seed: 0,
            behavior: BehaviorKind::OnlineDqn,
            online: OnlineDqnConfig::default(),
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.episodes == 0 {
            return Err(ExperimentError::Config("episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_epsilon) {
            return Err(ExperimentError::Config(format!("noise_epsilon {} outside [0, 1]", self.noise_epsilon)));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ExperimentError::Config(format!("subsample_fraction {} outside (0, 1]", self.subsample_fraction)));
        }
        Ok(())
    }
}

/// Everything one `train` invocation needs. Without `dataset_path` the
/// dataset is produced from `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub dataset_path: Option<PathBuf>,
    pub generate: GenerateConfig,
    /// Episode fraction kept from the dataset before training.
    pub dataset_fraction: f64,
    pub subsample_seed: u64,
    pub mode: Mode,
    pub loss: LossConfig,
    pub training_steps: usize,
    pub batch_size: usize,
    pub target_update_period: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    pub divergence_threshold: f64,
    /// Training-curve row every this many updates; 0 disables the curve.
    pub log_every: usize,
    /// Extra evaluation rows during training; 0 evaluates only at the end.
    pub eval_every: usize,
    pub eval: EvalConfig,
    pub output_dir: Option<PathBuf>,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "catch".into(),
            dataset_path: None,
            generate: GenerateConfig::default(),
            dataset_fraction: 1.0,
            subsample_seed: 0,
            mode: Mode::RBve,
            loss: LossConfig::default(),
            training_steps: 20_000,
            batch_size: 128,
            target_update_period: 2500,
            learning_rate: 1e-4,
            hidden: vec![56, 56],
            seeds: vec![1, 2, 3, 4, 5],
            divergence_threshold: 1e6,
            log_every: 1000,
            eval_every: 0,
            eval: EvalConfig::default(),
            output_dir: None,
            save_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("no seeds".into()));
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return Err(ExperimentError::Config(format!("dataset_fraction {} outside (0, 1]", self.dataset_fraction)));
        }
        if self.batch_size == 0 || self.target_update_period == 0 || self.hidden.contains(&0) {
            return Err(ExperimentError::Config("batch_size, target_update_period and hidden widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ExperimentError::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if self.eval.episodes == 0 {
            return Err(ExperimentError::Config("eval.episodes must be positive".into()));
        }
        self.loss.validate()?;
        if self.dataset_path.is_none() {
            self.generate.validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            mode: self.mode,
            batch_size: self.batch_size,
            full_batch: false,
            target_update_period: self.target_update_period,
            optimizer: OptimizerConfig::Adam(AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }),
            hidden: self.hidden.clone(),
            seed,
            divergence_threshold: self.divergence_threshold,
        }
    }

    /// Evaluation seed of a training seed; offset far from generation seeds.
    pub fn eval_seed(&self, seed: u64) -> u64 {
        self.eval.seed.wrapping_add(seed)
    }
}
