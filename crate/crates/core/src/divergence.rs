//! The four-state counterexample where Q-learning with a rectifier network
//! escapes to infinity while behavior value estimation stays bounded.
//!
//! States carry a scalar feature `s1 = 0`, `s2 = 1`, `s3 = beta`, and actions
//! are one-hot triples with `a_i[i] = 1`. The network is
//!
//! ```text
//! Q(s, a) = w relu(s) + u1 relu(a[0] - 2s) + u2 relu(a[1] - 2s) + u3 relu(-2s - a[2])
//! ```
//!
//! with the first layer frozen, so `Q(s1, a0) = u1`, `Q(s1, a1) = u2`,
//! `Q(s1, a2) = 0`, `Q(s2, .) = w` and `Q(s3, .) = beta w`. The dataset is
//! `{(s1, a0, 1, s4), (s1, a1, 0, s2), (s2, a2, 0, s3)}`.

use ndarray::{array, Array1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, LossConfig, Mode, OptimizerConfig, TrainConfig, Trainer};
use crate::datastore::{Dataset, EpisodeLog};
use crate::envs::{DivergenceMdp, Environment, Observation};
use crate::neuralnet::{AdamConfig, Dense, Mlp, QHead, QNetwork};

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DivergenceError {
    #[error("network does not have the fixed toy architecture: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub w: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub gamma: f64,
    /// Feature of `s3`.
    pub beta_feature: f64,
    pub learning_rate: f64,
    pub initial: ToyParams,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta_feature: 2.0,
            learning_rate: 0.1,
            initial: ToyParams { w: 1.0, u1: 0.0, u2: 0.0, u3: 0.0 },
        }
    }
}

impl ToyConfig {
    /// `gamma beta > 1`: the growth factor of `w` exceeds one.
    pub fn diverges_in_theory(&self) -> bool {
        self.gamma * self.beta_feature > 1.0 && self.initial.w > 0.0
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Closed-form network value for state feature `s` and action index `a`.
pub fn toy_forward(p: &ToyParams, s: f64, action: usize) -> f64 {
    let mut a = [0.0; 3];
    a[action] = 1.0;
    p.w * relu(s) + p.u1 * relu(a[0] - 2.0 * s) + p.u2 * relu(a[1] - 2.0 * s) + p.u3 * relu(-2.0 * s - a[2])
}

/// Full-batch gradients of `1/2 sum (Q - target)^2` with max-bootstrap
/// targets held constant: `(du1, du2, dw)`. `u3` never receives gradient.
pub fn analytic_gradients(p: &ToyParams, cfg: &ToyConfig) -> (f64, f64, f64) {
    (p.u1 - 1.0, p.u2 - cfg.gamma * p.w, (1.0 - cfg.gamma * cfg.beta_feature) * p.w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GdOutcome {
    /// First step whose `|w|` exceeds the threshold.
    Diverged { step: usize },
    Bounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdTrace {
    /// Parameters before the first update and after every update.
    pub params: Vec<ToyParams>,
    pub outcome: GdOutcome,
}

/// Iterates the analytic gradient-descent recursion, stopping at the first
/// step where `|w| > threshold`.
pub fn run_gradient_descent(cfg: &ToyConfig, steps: usize, threshold: f64) -> GdTrace {
    let mut p = cfg.initial;
    let mut params = vec![p];
    for step in 1..=steps {
        let (du1, du2, dw) = analytic_gradients(&p, cfg);
        p = ToyParams { w: p.w - cfg.learning_rate * dw, u1: p.u1 - cfg.learning_rate * du1, u2: p.u2 - cfg.learning_rate * du2, u3: p.u3 };
        params.push(p);
        if !(p.w.abs() <= threshold) {
            return GdTrace { params, outcome: GdOutcome::Diverged { step } };
        }
    }
    GdTrace { params, outcome: GdOutcome::Bounded }
}

/// Closed-form crossing step of `w_t = w_0 (1 + alpha (gamma beta - 1))^t`.
pub fn predicted_crossing(cfg: &ToyConfig, threshold: f64) -> Option<usize> {
    let growth = 1.0 + cfg.learning_rate * (cfg.gamma * cfg.beta_feature - 1.0);
    (growth > 1.0 && cfg.initial.w > 0.0).then(|| ((threshold / cfg.initial.w).ln() / growth.ln()).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Transitions in dataset order, one per step.
    Cyclic,
    /// One transition drawn uniformly per step.
    Uniform { seed: u64 },
}

/// Single-transition stochastic updates of the analytic system. Each
/// transition touches only its own parameter.
pub fn run_sgd(cfg: &ToyConfig, steps: usize, sampling: Sampling, threshold: f64) -> GdTrace {
    let mut rng = match sampling {
        Sampling::Uniform { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Sampling::Cyclic => None,
    };
    let mut p = cfg.initial;
    let mut params = vec![p];
    for step in 1..=steps {
        let which = match rng.as_mut() {
            Some(r) => r.random_range(0..3),
            None => (step - 1) % 3,
        };
        let (du1, du2, dw) = analytic_gradients(&p, cfg);
        match which {
            0 => p.u1 -= cfg.learning_rate * du1,
            1 => p.u2 -= cfg.learning_rate * du2,
            _ => p.w -= cfg.learning_rate * dw,
        }
        params.push(p);
        if !(p.w.abs() <= threshold) {
            return GdTrace { params, outcome: GdOutcome::Diverged { step } };
        }
    }
    GdTrace { params, outcome: GdOutcome::Bounded }
}

/// The toy architecture as a generic action-conditioned network: input
/// `[s, a0, a1, a2]`, four frozen rectifier units, trainable output weights
/// `[w, u1, u2, u3]` and a frozen zero output bias.
pub fn toy_network(p: &ToyParams) -> QNetwork {
    let first = Dense::new(
        array![[1.0, 0.0, 0.0, 0.0], [-2.0, 1.0, 0.0, 0.0], [-2.0, 0.0, 1.0, 0.0], [-2.0, 0.0, 0.0, -1.0]],
        Array1::zeros(4),
    )
    .unwrap()
    .frozen();
    let mut second = Dense::new(array![[p.w, p.u1, p.u2, p.u3]], array![0.0]).unwrap();
    second.train_bias = false;
    QNetwork::from_mlp(Mlp::from_layers(vec![first, second]).unwrap(), QHead::ActionConditioned, 3).unwrap()
}

/// Reads `(w, u1, u2, u3)` back, checking that the network still has the
/// toy shape and first layer.
pub fn toy_params_of(net: &QNetwork) -> Result<ToyParams, DivergenceError> {
    let reference = toy_network(&ToyParams { w: 0.0, u1: 0.0, u2: 0.0, u3: 0.0 });
    let layers = net.network().layers();
    if net.head() != QHead::ActionConditioned
        || net.num_actions() != 3
        || layers.len() != 2
        || layers[0] != reference.network().layers()[0]
        || layers[1].weights.dim() != (1, 4)
        || layers[1].bias[0] != 0.0
    {
        return Err(DivergenceError::ArchitectureMismatch(format!("{} layers, head {:?}", layers.len(), net.head())));
    }
    let o = &layers[1].weights;
    Ok(ToyParams { w: o[[0, 0]], u1: o[[0, 1]], u2: o[[0, 2]], u3: o[[0, 3]] })
}

/// The three-transition dataset as two logged episodes: `s1 -a0-> s4`
/// (terminal) and `s1 -a1-> s2 -a2-> s3` (cut off at `s3`).
///
/// Features are stored in single precision, so `beta` should be exactly
/// representable there for the generic and closed-form runs to agree.
pub fn toy_dataset(beta: f64, gamma: f64) -> Dataset {
    let env = DivergenceMdp::new(beta);
    let f = |x: f64| Observation::new(vec![x]);
    let logs = vec![
        EpisodeLog {
            episode_id: 0,
            states: vec![f(0.0), f(-1.0)],
            actions: vec![0],
            rewards: vec![1.0],
            terminal: true,
            final_next_action: None,
        },
        EpisodeLog {
            episode_id: 1,
            states: vec![f(0.0), f(1.0), f(beta)],
            actions: vec![1, 2],
            rewards: vec![0.0, 0.0],
            terminal: false,
            final_next_action: None,
        },
    ];
    Dataset::from_logs(env.spec().clone(), gamma, 0.0, "divergence counterexample transitions", logs)
        .expect("well-formed toy dataset")
}

/// Full-batch training configuration of the generic loop on the toy data.
/// The loop minimizes the mean squared error over the records that produce
/// a target, so matching `1/2 sum` gradient descent with step `alpha` needs
/// `alpha * records / 2`.
pub fn toy_train_config(cfg: &ToyConfig, mode: Mode, optimizer: OptimizerConfig) -> TrainConfig {
    TrainConfig {
        loss: LossConfig { gamma: cfg.gamma, double_dqn: false, ..LossConfig::default() },
        mode,
        full_batch: true,
        target_update_period: 1,
        optimizer,
        divergence_threshold: DIVERGENCE_THRESHOLD,
        ..TrainConfig::default()
    }
}

/// Generic-loop learning rate equivalent to analytic step `alpha` when
/// `records` transitions contribute to the mean loss.
pub fn equivalent_learning_rate(alpha: f64, records: usize) -> f64 {
    alpha * records as f64 / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenericRun {
    pub trace: Vec<ToyParams>,
    pub diverged_at: Option<usize>,
}

/// Trains the toy network with the generic offline loop and records the
/// parameters after every update.
pub fn run_generic(cfg: &ToyConfig, mode: Mode, optimizer: OptimizerConfig, steps: usize) -> Result<GenericRun, DivergenceError> {
    let data = toy_dataset(cfg.beta_feature, cfg.gamma);
    let net = toy_network(&cfg.initial);
    let mut trainer = Trainer::with_network(&data, toy_train_config(cfg, mode, optimizer), net)?;
    let mut trace = vec![toy_params_of(trainer.online())?];
    let mut error = None;
    let outcome = trainer.run(steps, |report| match toy_params_of(report.online) {
        Ok(p) => trace.push(p),
        Err(e) => error = Some(e),
    })?;
    if let Some(e) = error {
        return Err(e);
    }
    Ok(GenericRun { trace, diverged_at: outcome.diverged_at })
}

/// Plain SGD run of the generic loop with the learning rate matched to the
/// closed-form recursion.
pub fn run_generic_gd(cfg: &ToyConfig, mode: Mode, steps: usize) -> Result<GenericRun, DivergenceError> {
    let records = match mode {
        Mode::Bve | Mode::RBve => 2,
        _ => 3,
    };
    let lr = equivalent_learning_rate(cfg.learning_rate, records);
    run_generic(cfg, mode, OptimizerConfig::Sgd { learning_rate: lr }, steps)
}

pub fn run_generic_adam(cfg: &ToyConfig, mode: Mode, learning_rate: f64, steps: usize) -> Result<GenericRun, DivergenceError> {
    run_generic(cfg, mode, OptimizerConfig::Adam(AdamConfig { learning_rate, ..AdamConfig::default() }), steps)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCheck {
    pub steps_compared: usize,
    /// Largest relative difference over `(w, u1, u2)` and all steps.
    pub max_relative_discrepancy: f64,
}

/// DQN through the generic loop against the closed-form recursion, step by
/// step while both are finite.
pub fn cross_check_with_neuralnet(cfg: &ToyConfig, steps: usize) -> Result<CrossCheck, DivergenceError> {
    let analytic = run_gradient_descent(cfg, steps, DIVERGENCE_THRESHOLD);
    let generic = run_generic_gd(cfg, Mode::Dqn, steps)?;
    let mut worst: f64 = 0.0;
    let n = analytic.params.len().min(generic.trace.len());
    for (a, g) in analytic.params.iter().zip(&generic.trace).take(n) {
        worst = worst.max(rel(a.w, g.w)).max(rel(a.u1, g.u1)).max(rel(a.u2, g.u2));
    }
    Ok(CrossCheck { steps_compared: n - 1, max_relative_discrepancy: worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_closed_form_table() {
        let p = ToyParams { w: 0.7, u1: -0.3, u2: 1.9, u3: 5.0 };
        assert_eq!(toy_forward(&p, 0.0, 0), -0.3);
        assert_eq!(toy_forward(&p, 0.0, 1), 1.9);
        assert_eq!(toy_forward(&p, 0.0, 2), 0.0);
        for a in 0..3 {
            assert_eq!(toy_forward(&p, 1.0, a), 0.7);
            assert_eq!(toy_forward(&p, 2.0, a), 1.4);
        }
        let net = toy_network(&p);
        for (s, a) in [(0.0, 0), (0.0, 1), (0.0, 2), (1.0, 1), (2.0, 2), (-1.0, 0)] {
            assert_eq!(net.q_values(&[s]).unwrap()[a], toy_forward(&p, s, a));
        }
    }

    #[test]
    fn gradient_values() {
        let cfg = ToyConfig::default();
        let p = ToyParams { w: 1.0, u1: 1.0, u2: 0.99, u3: 0.0 };
        let (du1, du2, dw) = analytic_gradients(&p, &cfg);
        assert_eq!((du1, du2), (0.0, 0.0));
        assert!((dw + 0.98).abs() < 1e-15);
        let edge = ToyConfig { gamma: 0.5, ..cfg };
        assert_eq!(analytic_gradients(&p, &edge).2, 0.0);
    }

    #[test]
    fn geometric_growth_crosses_at_148() {
        let cfg = ToyConfig::default();
        assert_eq!(predicted_crossing(&cfg, DIVERGENCE_THRESHOLD), Some(148));
        let trace = run_gradient_descent(&cfg, 1000, DIVERGENCE_THRESHOLD);
        assert_eq!(trace.outcome, GdOutcome::Diverged { step: 148 });
        for (t, p) in trace.params.iter().enumerate().take(100) {
            assert!((p.w / 1.098f64.powi(t as i32) - 1.0).abs() < 1e-12);
        }
        let u1 = trace.params.last().unwrap().u1;
        assert!((u1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn contraction_stays_bounded() {
        let cfg = ToyConfig { beta_feature: 0.5, ..ToyConfig::default() };
        let trace = run_gradient_descent(&cfg, 2000, DIVERGENCE_THRESHOLD);
        assert_eq!(trace.outcome, GdOutcome::Bounded);
        assert!(trace.params.last().unwrap().w.abs() < 1e-10);
    }

    #[test]
    fn stochastic_orders_still_diverge() {
        let cfg = ToyConfig::default();
        for sampling in [Sampling::Cyclic, Sampling::Uniform { seed: 4 }] {
            assert!(matches!(run_sgd(&cfg, 10_000, sampling, DIVERGENCE_THRESHOLD).outcome, GdOutcome::Diverged { .. }));
        }
    }

    #[test]
    fn toy_dataset_shape() {
        let d = toy_dataset(2.0, 0.99);
        assert_eq!(d.num_transitions(), 3);
        let recs: Vec<_> = d.records().collect();
        assert!(recs[0].terminal && recs[0].reward == 1.0);
        assert_eq!(recs[1].next_action, Some(2));
        assert!(recs[2].is_truncated_tail());
    }

    #[test]
    fn architecture_check() {
        let mut net = toy_network(&ToyConfig::default().initial);
        assert!(toy_params_of(&net).is_ok());
        net.network_mut().layers_mut()[0].weights[[1, 0]] = -1.0;
        assert!(matches!(toy_params_of(&net), Err(DivergenceError::ArchitectureMismatch(_))));
    }

    #[test]
    fn generic_loop_tracks_recursion_briefly() {
        let c = cross_check_with_neuralnet(&ToyConfig::default(), 20).unwrap();
        assert_eq!(c.steps_compared, 20);
        assert!(c.max_relative_discrepancy < 1e-8, "{c:?}");
    }
}
