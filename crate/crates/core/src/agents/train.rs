use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_loss, AgentError, LossBreakdown, LossConfig, Minibatch, Mode, Sample};
use crate::datastore::Dataset;
use crate::neuralnet::{Adam, AdamConfig, NetError, Optimizer, QNetwork, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Sgd { learning_rate: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adam(AdamConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub mode: Mode,
    pub batch_size: usize,
    /// Use every transition once per step instead of sampling.
    pub full_batch: bool,
    pub target_update_period: usize,
    pub optimizer: OptimizerConfig,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Largest tolerated `|param|` before the run is declared diverged.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            mode: Mode::RBve,
            batch_size: 128,
            full_batch: false,
            target_update_period: 2500,
            optimizer: OptimizerConfig::default(),
            hidden: vec![56, 56],
            seed: 0,
            divergence_threshold: 1e6,
        }
    }
}

/// What the observer of [`Trainer::run`] sees after each update.
pub struct StepReport<'a> {
    /// Number of completed updates.
    pub step: usize,
    pub loss: LossBreakdown,
    pub online: &'a QNetwork,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub steps_completed: usize,
    /// Update index at which the parameters blew past the threshold.
    pub diverged_at: Option<usize>,
    pub max_abs_param: f64,
}

/// Offline training loop over a fixed dataset: uniform minibatches (with
/// replacement), target snapshots every `target_update_period` updates.
pub struct Trainer<'d> {
    dataset: &'d Dataset,
    cfg: TrainConfig,
    online: QNetwork,
    target: QNetwork,
    optimizer: Box<dyn Optimizer>,
    rng: ChaCha8Rng,
    index: Vec<(u32, u32)>,
    filter_threshold: Option<f64>,
    steps: usize,
    diverged_at: Option<usize>,
}

impl<'d> Trainer<'d> {
    /// Fresh network with the configured hidden widths, initialized from
    /// `cfg.seed`.
    pub fn new(dataset: &'d Dataset, cfg: TrainConfig) -> Result<Self, AgentError> {
        let spec = &dataset.header().env_spec;
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = QNetwork::mlp(spec.observation_dim, spec.num_actions, &cfg.hidden, &mut init);
        Self::with_network(dataset, cfg, net)
    }

    pub fn with_network(dataset: &'d Dataset, cfg: TrainConfig, net: QNetwork) -> Result<Self, AgentError> {
        cfg.loss.validate()?;
        let spec = &dataset.header().env_spec;
        if net.observation_dim() != spec.observation_dim || net.num_actions() != spec.num_actions {
            return Err(AgentError::InvalidConfig(format!(
                "network {}x{} does not fit dataset {}x{}",
                net.observation_dim(),
                net.num_actions(),
                spec.observation_dim,
                spec.num_actions
            )));
        }
        if dataset.num_transitions() == 0 || cfg.batch_size == 0 || cfg.target_update_period == 0 {
            return Err(AgentError::InvalidConfig("empty dataset, batch or target period".into()));
        }
        let optimizer: Box<dyn Optimizer> = match cfg.optimizer {
            OptimizerConfig::Adam(a) => Box::new(Adam::new(a, net.network())),
            OptimizerConfig::Sgd { learning_rate } => Box::new(Sgd::new(learning_rate)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let filter_threshold = (cfg.mode == Mode::FilteredBc).then(|| dataset.mean_episode_return()).flatten();
        Ok(Self {
            dataset,
            target: net.snapshot(),
            online: net,
            optimizer,
            rng,
            index: dataset.transition_index(),
            filter_threshold,
            steps: 0,
            diverged_at: None,
            cfg,
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn sample(&mut self) -> Minibatch<'d> {
        let n = self.cfg.loss.n_step;
        let dataset = self.dataset;
        let window = |&(e, t): &(u32, u32)| dataset.window(e as usize, t as usize, n);
        let samples = if self.cfg.full_batch {
            self.index.iter().map(|p| Sample { window: window(p), count: 1 }).collect()
        } else {
            let mut draws: Vec<usize> = (0..self.cfg.batch_size).map(|_| self.rng.random_range(0..self.index.len())).collect();
            draws.sort_unstable();
            let mut samples: Vec<Sample<'d>> = Vec::with_capacity(draws.len());
            let mut last = usize::MAX;
            for d in draws {
                if d == last {
                    samples.last_mut().unwrap().count += 1;
                } else {
                    samples.push(Sample { window: window(&self.index[d]), count: 1 });
                    last = d;
                }
            }
            samples
        };
        Minibatch::new(samples).expect("non-empty windows")
    }

    /// One update. After a divergence every further call fails.
    pub fn step(&mut self) -> Result<LossBreakdown, AgentError> {
        if let Some(step) = self.diverged_at {
            return Err(AgentError::DivergenceDetected { step, max_abs_param: self.online.network().max_abs_param() });
        }
        let batch = self.sample();
        let (loss, grads) =
            compute_loss(&self.online, &self.target, &batch, &self.cfg.loss, self.cfg.mode, self.filter_threshold)?;
        let result = self.optimizer.step(self.online.network_mut(), &grads);
        self.steps += 1;
        let max_abs = self.online.network().max_abs_param();
        match result {
            Err(NetError::DivergenceDetected { .. }) => {}
            Err(e) => return Err(e.into()),
            Ok(()) if max_abs <= self.cfg.divergence_threshold => {
                if self.steps.is_multiple_of(self.cfg.target_update_period) {
                    self.target = self.online.snapshot();
                }
                return Ok(loss);
            }
            Ok(()) => {}
        }
        self.diverged_at = Some(self.steps);
        Err(AgentError::DivergenceDetected { step: self.steps, max_abs_param: max_abs })
    }

    /// Runs `steps` updates or until divergence, which ends the run without
    /// an error.
    pub fn run(&mut self, steps: usize, mut observer: impl FnMut(StepReport<'_>)) -> Result<TrainOutcome, AgentError> {
        for _ in 0..steps {
            match self.step() {
                Ok(loss) => observer(StepReport { step: self.steps, loss, online: &self.online }),
                Err(AgentError::DivergenceDetected { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(self.outcome())
    }

    pub fn outcome(&self) -> TrainOutcome {
        TrainOutcome {
            network: self.online.clone(),
            steps_completed: self.steps,
            diverged_at: self.diverged_at,
            max_abs_param: self.online.network().max_abs_param(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{log_episodes, UniformPolicy};
    use crate::envs::ChainMdp;

    fn chain_data() -> Dataset {
        log_episodes(&mut ChainMdp::new(4), &mut UniformPolicy::new(2, 1), 10, 0.99, 1).unwrap()
    }

    fn cfg(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            batch_size: 16,
            target_update_period: 20,
            hidden: vec![8],
            optimizer: OptimizerConfig::Adam(AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() }),
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_network() {
        let data = chain_data();
        let mut t = Trainer::new(&data, cfg(Mode::Bve)).unwrap();
        let init = t.online().clone();
        let out = t.run(0, |_| {}).unwrap();
        assert_eq!(out.network, init);
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = chain_data();
        for mode in Mode::ALL {
            let run = || Trainer::new(&data, cfg(mode)).unwrap().run(50, |_| {}).unwrap().network;
            assert_eq!(run(), run(), "{mode}");
        }
    }

    #[test]
    fn lambda_zero_matches_unranked_step_for_step() {
        let data = chain_data();
        let mut c = cfg(Mode::RBve);
        c.loss.lambda_rank = 0.0;
        let a = Trainer::new(&data, c.clone()).unwrap().run(100, |_| {}).unwrap().network;
        c.mode = Mode::Bve;
        let b = Trainer::new(&data, c.clone()).unwrap().run(100, |_| {}).unwrap().network;
        assert_eq!(a, b);
        c.mode = Mode::RDqn;
        let a = Trainer::new(&data, c.clone()).unwrap().run(100, |_| {}).unwrap().network;
        c.mode = Mode::Ddqn;
        let b = Trainer::new(&data, c).unwrap().run(100, |_| {}).unwrap().network;
        assert_eq!(a, b);
    }

    #[test]
    fn target_refreshes_on_period() {
        let data = chain_data();
        let mut t = Trainer::new(&data, cfg(Mode::Dqn)).unwrap();
        for _ in 0..19 {
            t.step().unwrap();
        }
        assert_ne!(t.target(), t.online());
        t.step().unwrap();
        assert_eq!(t.target(), t.online());
    }

    #[test]
    fn rejects_mismatched_network() {
        let data = chain_data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetwork::mlp(3, 2, &[4], &mut rng);
        assert!(Trainer::with_network(&data, cfg(Mode::Bve), net).is_err());
    }
}
