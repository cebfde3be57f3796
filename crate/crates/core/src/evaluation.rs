//! Greedy deployment of a trained network and the diagnostics computed from
//! its rollouts.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvError, Environment, Observation};
use crate::neuralnet::QNetwork;
use crate::tabular::argmax;

/// `0.4^8`.
pub const EVAL_EPSILON: f64 = 0.000_655_36;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("reference return equals random return ({0}); normalization undefined")]
    DegenerateReference(f64),
    #[error("network expects {expected} features and {actions} actions, environment has {found} and {found_actions}")]
    Incompatible { expected: usize, actions: usize, found: usize, found_actions: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("csv: {0}")]
    Csv(String),
}

/// `argmax_a Q(s, a)` with a small probability of a uniform action.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    pub network: &'a QNetwork,
    pub eval_epsilon: f64,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(network: &'a QNetwork) -> Self {
        Self { network, eval_epsilon: EVAL_EPSILON }
    }

    pub fn with_epsilon(network: &'a QNetwork, eval_epsilon: f64) -> Self {
        Self { network, eval_epsilon }
    }

    /// Chosen action and the full row of action values.
    pub fn act(&self, observation: &[f64], rng: &mut impl Rng) -> (usize, Vec<f64>) {
        let q = self.network.q_values(observation).expect("checked observation width");
        // always draw, so trajectories do not depend on epsilon being zero
        let explore = rng.random::<f64>() < self.eval_epsilon;
        let uniform = rng.random_range(0..q.len());
        (if explore { uniform } else { argmax(&q) }, q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEval {
    pub action: usize,
    /// `Q(s_t, a_t)` at the chosen action.
    pub q: f64,
    pub reward: f64,
    /// Realized discounted return from `t`.
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRollout {
    pub episodic_return: f64,
    pub steps: Vec<StepEval>,
}

impl EpisodeRollout {
    fn first(&self) -> Option<&StepEval> {
        self.steps.first()
    }
}

fn check_compatible(net: &QNetwork, env: &dyn Environment) -> Result<(), EvalError> {
    let spec = env.spec();
    if spec.observation_dim != net.observation_dim() || spec.num_actions != net.num_actions() {
        return Err(EvalError::Incompatible {
            expected: net.observation_dim(),
            actions: net.num_actions(),
            found: spec.observation_dim,
            found_actions: spec.num_actions,
        });
    }
    Ok(())
}

fn discount_backward(steps: &mut [StepEval], gamma: f64) {
    let mut acc = 0.0;
    for s in steps.iter_mut().rev() {
        acc = s.reward + gamma * acc;
        s.g = acc;
    }
}

/// Runs `num_episodes` episodes. Episode resets and exploration draws all
/// derive from `seed`.
pub fn rollout(
    policy: &GreedyPolicy<'_>,
    env: &mut dyn Environment,
    num_episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<EpisodeRollout>, EvalError> {
    check_compatible(policy.network, env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_episodes);
    for _ in 0..num_episodes {
        let mut obs = env.reset(rng.next_u64());
        let mut steps = Vec::new();
        loop {
            let (action, q) = policy.act(&obs, &mut rng);
            let result = env.step(action)?;
            steps.push(StepEval { action, q: q[action], reward: result.reward, g: 0.0 });
            if result.done() {
                break;
            }
            obs = result.observation;
        }
        discount_backward(&mut steps, gamma);
        out.push(EpisodeRollout { episodic_return: steps.iter().map(|s| s.reward).sum(), steps });
    }
    Ok(out)
}

/// Mean undiscounted return of the uniform random policy.
pub fn random_policy_return(env: &mut dyn Environment, num_episodes: usize, seed: u64) -> Result<f64, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = env.spec().num_actions;
    let mut total = 0.0;
    for _ in 0..num_episodes {
        env.reset(rng.next_u64());
        loop {
            let r = env.step(rng.random_range(0..n))?;
            total += r.reward;
            if r.done() {
                break;
            }
        }
    }
    Ok(total / num_episodes.max(1) as f64)
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mean of `max(Q - G, 0)^2` at each episode's first step.
pub fn over_estimation_error(rollouts: &[EpisodeRollout]) -> f64 {
    mean_of(rollouts.iter().filter_map(EpisodeRollout::first).map(|s| (s.q - s.g).max(0.0).powi(2)))
}

/// Same as [`over_estimation_error`] over every visited step.
pub fn over_estimation_error_all_steps(rollouts: &[EpisodeRollout]) -> f64 {
    mean_of(rollouts.iter().flat_map(|r| &r.steps).map(|s| (s.q - s.g).max(0.0).powi(2)))
}

/// Mean signed `Q - G` at each episode's first step.
pub fn value_error(rollouts: &[EpisodeRollout]) -> f64 {
    mean_of(rollouts.iter().filter_map(EpisodeRollout::first).map(|s| s.q - s.g))
}

/// Mean over states of the gap between the best and second-best action
/// values.
pub fn action_gap<'s>(net: &QNetwork, states: impl IntoIterator<Item = &'s Observation>) -> f64 {
    mean_of(states.into_iter().map(|s| row_gap(&net.q_values(s).expect("observation width"))))
}

pub fn row_gap(q: &[f64]) -> f64 {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in q {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    top - second
}

/// `100 (agent - random) / (reference - random)`.
pub fn normalized_score(agent: f64, random: f64, reference: f64) -> Result<f64, EvalError> {
    if reference == random {
        return Err(EvalError::DegenerateReference(reference));
    }
    Ok(100.0 * (agent - random) / (reference - random))
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    mean_of(xs.iter().copied())
}

/// Standard error of the mean; zero for a single value.
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return if n == 1 { 0.0 } else { f64::NAN };
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100, gamma: 0.99, epsilon: EVAL_EPSILON, seed: 1_000_003 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalSummary {
    pub episodic_return_median: f64,
    pub episodic_return_mean: f64,
    pub over_estimation_error: f64,
    pub over_estimation_error_all_steps: f64,
    pub value_error_mean: f64,
}

pub fn evaluate(net: &QNetwork, env: &mut dyn Environment, cfg: &EvalConfig) -> Result<(EvalSummary, Vec<EpisodeRollout>), EvalError> {
    let rollouts = rollout(&GreedyPolicy::with_epsilon(net, cfg.epsilon), env, cfg.episodes, cfg.gamma, cfg.seed)?;
    let returns: Vec<f64> = rollouts.iter().map(|r| r.episodic_return).collect();
    let summary = EvalSummary {
        episodic_return_median: median(&returns),
        episodic_return_mean: mean(&returns),
        over_estimation_error: over_estimation_error(&rollouts),
        over_estimation_error_all_steps: over_estimation_error_all_steps(&rollouts),
        value_error_mean: value_error(&rollouts),
    };
    Ok((summary, rollouts))
}

/// One evaluated run. Column order is the CSV contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsRow {
    pub env_name: String,
    pub mode: String,
    pub seed: u64,
    pub dataset_fraction: f64,
    pub noise_epsilon: f64,
    pub lambda_rank: f64,
    pub steps: usize,
    pub episodic_return_median: f64,
    pub episodic_return_mean: f64,
    pub over_estimation_error: f64,
    pub over_estimation_error_all_steps: f64,
    pub value_error_mean: f64,
    pub action_gap_mean: f64,
    pub normalized_score: f64,
    /// `OK`; `DIVERGED` when training crossed the parameter threshold;
    /// `UNNORMALIZED` when no usable reference return exists; `FAILED`.
    pub status: String,
    pub manifest_hash: String,
}

impl MetricsRow {
    pub fn diverged(&self) -> bool {
        self.status == "DIVERGED"
    }

    pub fn flagged(&self) -> bool {
        self.status != "OK"
    }

    /// Every numeric field is finite, or the row is flagged.
    pub fn is_well_formed(&self) -> bool {
        let nums = [
            self.dataset_fraction,
            self.episodic_return_median,
            self.episodic_return_mean,
            self.over_estimation_error,
            self.over_estimation_error_all_steps,
            self.value_error_mean,
            self.action_gap_mean,
            self.normalized_score,
        ];
        self.flagged() || (nums.iter().all(|x| x.is_finite()) && self.over_estimation_error >= 0.0)
    }
}

/// Writes rows with a header line.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(input: impl std::io::Read) -> Result<Vec<T>, EvalError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| EvalError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Catch, ChainMdp, CHAIN_RIGHT};
    use crate::neuralnet::{Dense, Mlp, QHead};
    use ndarray::{Array1, Array2};

    fn step(q: f64, g: f64) -> EpisodeRollout {
        EpisodeRollout { episodic_return: g, steps: vec![StepEval { action: 0, q, reward: g, g }] }
    }

    fn constant_net(obs: usize, values: &[f64]) -> QNetwork {
        let layer = Dense::new(Array2::zeros((values.len(), obs)), Array1::from(values.to_vec())).unwrap();
        QNetwork::from_mlp(Mlp::from_layers(vec![layer]).unwrap(), QHead::PerAction, values.len()).unwrap()
    }

    #[test]
    fn over_estimation_examples() {
        assert_eq!(over_estimation_error(&[step(2.0, 2.0), step(-1.0, -1.0)]), 0.0);
        assert_eq!(over_estimation_error(&[step(0.0, 1.0), step(1.0, 3.0)]), 0.0);
        assert_eq!(over_estimation_error(&[step(1.0, 0.0), step(-1.0, 0.0)]), 0.5);
        let shifted = [step(8.0, 7.0), step(6.0, 7.0)];
        assert_eq!(over_estimation_error(&shifted), 0.5);
    }

    #[test]
    fn value_error_examples() {
        assert_eq!(value_error(&[step(1.0, 1.0)]), 0.0);
        assert_eq!(value_error(&[step(1.5, 1.0), step(0.5, 0.0)]), 0.5);
        assert_eq!(value_error(&[step(1.0, 0.0), step(-1.0, 0.0)]), 0.0);
    }

    #[test]
    fn gaps() {
        assert_eq!(row_gap(&[3.0, 1.0, 0.0]), 2.0);
        assert_eq!(row_gap(&[0.5, 0.5]), 0.0);
        assert_eq!(row_gap(&[0.0, 1.0, 3.0]), 2.0);
        let net = constant_net(2, &[1.0, 1.0, 1.0]);
        let states = [Observation::new(vec![0.0, 1.0])];
        assert_eq!(action_gap(&net, &states), 0.0);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalized_score(5.0, 1.0, 5.0).unwrap(), 100.0);
        assert_eq!(normalized_score(1.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_score(3.0, 1.0, 5.0).unwrap(), 50.0);
        assert_eq!(normalized_score(3.0, 1.0, 1.0), Err(EvalError::DegenerateReference(1.0)));
    }

    #[test]
    fn right_preferring_net_solves_chain() {
        let mut values = [0.0, 0.0];
        values[CHAIN_RIGHT] = 1.0;
        let mut env = ChainMdp::new(5);
        let net = constant_net(env.spec().observation_dim, &values);
        let rollouts = rollout(&GreedyPolicy::with_epsilon(&net, 0.0), &mut env, 10, 0.9, 0).unwrap();
        for r in &rollouts {
            assert_eq!(r.episodic_return, 1.0);
            for w in r.steps.windows(2) {
                assert!((w[0].g - (w[0].reward + 0.9 * w[1].g)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_net_on_catch_is_constant_and_deterministic() {
        let mut env = Catch::new();
        let net = constant_net(env.spec().observation_dim, &[0.0; 3]);
        let policy = GreedyPolicy::with_epsilon(&net, 0.0);
        let a = rollout(&policy, &mut env, 20, 0.99, 7).unwrap();
        for r in &a {
            assert!(r.steps.iter().all(|s| s.action == 0));
            assert!(r.episodic_return == 1.0 || r.episodic_return == -1.0);
        }
        let noisy = GreedyPolicy::new(&net);
        assert_eq!(rollout(&noisy, &mut env, 20, 0.99, 7).unwrap(), rollout(&noisy, &mut env, 20, 0.99, 7).unwrap());
    }

    #[test]
    fn incompatible_network_is_rejected() {
        let net = constant_net(3, &[0.0, 0.0]);
        let err = rollout(&GreedyPolicy::new(&net), &mut Catch::new(), 1, 0.99, 0).unwrap_err();
        assert!(matches!(err, EvalError::Incompatible { .. }));
    }

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((std_error(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip_keeps_column_order() {
        let row = MetricsRow {
            env_name: "catch".into(),
            mode: "r-bve".into(),
            seed: 3,
            dataset_fraction: 0.1,
            noise_epsilon: 0.25,
            lambda_rank: 0.005,
            steps: 10,
            episodic_return_median: 1.0,
            episodic_return_mean: 0.5,
            over_estimation_error: 0.0,
            over_estimation_error_all_steps: 0.1,
            value_error_mean: -0.2,
            action_gap_mean: 0.05,
            normalized_score: 80.0,
            status: "OK".into(),
            manifest_hash: "abc".into(),
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("envName,mode,seed,datasetFraction,noiseEpsilon,lambdaRank,steps,episodicReturnMedian,"));
        assert_eq!(read_csv::<MetricsRow>(&buf[..]).unwrap(), vec![row.clone()]);
        assert!(row.is_well_formed());
    }
}
