use ndarray::{Array2, ArrayView1};

use super::targets::discounted_prefix;
use super::{AgentError, Bootstrap, LossConfig, Mode};
use crate::datastore::TransitionRecord;
use crate::neuralnet::{Gradients, QNetwork};
use crate::tabular::argmax;

/// One distinct sampled transition, with the following records of its
/// episode for n-step targets, and how many times it was drawn.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub window: &'a [TransitionRecord],
    pub count: u32,
}

impl Sample<'_> {
    pub fn record(&self) -> &TransitionRecord {
        &self.window[0]
    }
}

#[derive(Debug, Clone)]
pub struct Minibatch<'a> {
    pub samples: Vec<Sample<'a>>,
    /// Draw-weighted mean return-to-go of the batch.
    pub batch_mean_return_to_go: f64,
}

impl<'a> Minibatch<'a> {
    pub fn new(samples: Vec<Sample<'a>>) -> Result<Self, AgentError> {
        if samples.iter().any(|s| s.window.is_empty()) {
            return Err(AgentError::WindowNotContiguous);
        }
        let n: u32 = samples.iter().map(|s| s.count).sum();
        if n == 0 {
            return Err(AgentError::EmptyEffectiveBatch);
        }
        let mean = samples.iter().map(|s| s.count as f64 * s.record().return_to_go).sum::<f64>() / n as f64;
        Ok(Self { samples, batch_mean_return_to_go: mean })
    }

    /// Every record once, single-step windows.
    pub fn from_records(records: &'a [TransitionRecord]) -> Result<Self, AgentError> {
        Self::new(records.iter().map(|r| Sample { window: std::slice::from_ref(r), count: 1 }).collect())
    }

    /// Number of draws, counting repeats.
    pub fn len(&self) -> u32 {
        self.samples.iter().map(|s| s.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// TD error for value modes; cross-entropy for BC; regression error for
    /// Monte-Carlo.
    pub td_loss: f64,
    /// Mean weighted ranking penalty (before the `lambda` factor).
    pub rank_loss: f64,
    pub aux_loss: f64,
    pub total: f64,
}

/// `clip(exp((G - batch_mean) / beta), 0, clip)`.
pub fn success_weight(return_to_go: f64, batch_mean: f64, cfg: &LossConfig) -> f64 {
    ((return_to_go - batch_mean) / cfg.beta_temp).exp().min(cfg.weight_clip)
}

/// Unweighted `sum_{i != a} max(Q_i - Q_a + nu, 0)^2`.
pub fn ranking_loss_terms(q: &[f64], action: usize, nu: f64) -> f64 {
    q.iter()
        .enumerate()
        .filter(|&(i, _)| i != action)
        .map(|(_, &qi)| (qi - q[action] + nu).max(0.0).powi(2))
        .sum()
}

/// Weighted ranking loss of one record.
pub fn ranking_loss(net: &QNetwork, record: &TransitionRecord, batch_mean: f64, cfg: &LossConfig) -> f64 {
    let q = net.q_values(&record.state).expect("observation width");
    success_weight(record.return_to_go, batch_mean, cfg) * ranking_loss_terms(&q, record.action, cfg.margin_nu)
}

fn logsumexp(row: ArrayView1<f64>) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn state_matrix<'r>(records: impl ExactSizeIterator<Item = &'r TransitionRecord>, dim: usize) -> Array2<f64> {
    let n = records.len();
    let mut m = Array2::zeros((n, dim));
    for (i, r) in records.enumerate() {
        m.row_mut(i).assign(&ArrayView1::from(r.state.as_slice()));
    }
    m
}

struct PendingTarget {
    sample: usize,
    partial: f64,
    discount: f64,
    next: usize,
    action: Option<usize>,
}

/// Batched n-step targets; `None` marks skipped records.
fn batch_targets(
    online: &QNetwork,
    target: &QNetwork,
    batch: &Minibatch,
    cfg: &LossConfig,
    bootstrap: Bootstrap,
) -> Result<Vec<Option<f64>>, AgentError> {
    let mut out = vec![None; batch.samples.len()];
    let mut pending = Vec::new();
    let mut next_states: Vec<&TransitionRecord> = Vec::new();
    for (i, s) in batch.samples.iter().enumerate() {
        let window = &s.window[..s.window.len().min(cfg.n_step)];
        let (m, ret) = discounted_prefix(window, cfg.gamma)?;
        let last = &window[m - 1];
        if last.terminal {
            out[i] = Some(ret);
            continue;
        }
        let action = match bootstrap {
            Bootstrap::Logged => match last.next_action {
                Some(a) => Some(a),
                None => continue,
            },
            Bootstrap::Max { .. } => None,
        };
        pending.push(PendingTarget { sample: i, partial: ret, discount: cfg.gamma.powi(m as i32), next: next_states.len(), action });
        next_states.push(last);
    }
    if pending.is_empty() {
        return Ok(out);
    }
    let dim = online.observation_dim();
    let mut next = Array2::zeros((next_states.len(), dim));
    for (i, r) in next_states.iter().enumerate() {
        next.row_mut(i).assign(&ArrayView1::from(r.next_state.as_slice()));
    }
    let q_target = target.q_batch(next.view());
    let q_online = match bootstrap {
        Bootstrap::Max { double: true } => Some(online.q_batch(next.view())),
        _ => None,
    };
    for p in pending {
        let row = q_target.row(p.next);
        let value = match (p.action, &q_online) {
            (Some(a), _) => row[a],
            (None, Some(qo)) => row[argmax(qo.row(p.next).as_slice().unwrap())],
            (None, None) => row[argmax(row.as_slice().unwrap())],
        };
        out[p.sample] = Some(p.partial + p.discount * value);
    }
    Ok(out)
}

/// Loss and parameter gradient of `online` for one minibatch. Targets are
/// computed from `target` (and `online` for double-Q action selection) as
/// constants.
///
/// `filter_threshold` is the episode-return threshold of filtered BC.
pub fn compute_loss(
    online: &QNetwork,
    target: &QNetwork,
    batch: &Minibatch,
    cfg: &LossConfig,
    mode: Mode,
    filter_threshold: Option<f64>,
) -> Result<(LossBreakdown, Gradients), AgentError> {
    let states = state_matrix(batch.samples.iter().map(Sample::record), online.observation_dim());
    let fwd = online.forward(states.view());
    let q = &fwd.q;
    let mut dq = Array2::<f64>::zeros(q.dim());
    let total_draws = batch.len() as f64;
    let mut out = LossBreakdown::default();

    match mode.bootstrap(cfg) {
        Some(bootstrap) => {
            let targets = batch_targets(online, target, batch, cfg, bootstrap)?;
            let n_eff: f64 = batch.samples.iter().zip(&targets).filter(|(_, t)| t.is_some()).map(|(s, _)| s.count as f64).sum();
            if n_eff == 0.0 {
                return Err(AgentError::EmptyEffectiveBatch);
            }
            for (i, (s, y)) in batch.samples.iter().zip(&targets).enumerate() {
                if let Some(y) = y {
                    let a = s.record().action;
                    let delta = q[[i, a]] - y;
                    out.td_loss += s.count as f64 * delta * delta / n_eff;
                    dq[[i, a]] += 2.0 * s.count as f64 * delta / n_eff;
                }
            }
        }
        None if mode == Mode::Mc => {
            for (i, s) in batch.samples.iter().enumerate() {
                let a = s.record().action;
                let delta = q[[i, a]] - s.record().return_to_go;
                out.td_loss += s.count as f64 * delta * delta / total_draws;
                dq[[i, a]] += 2.0 * s.count as f64 * delta / total_draws;
            }
        }
        None => {
            let threshold = match mode {
                Mode::FilteredBc => Some(filter_threshold.ok_or_else(|| {
                    AgentError::InvalidConfig("filtered BC needs an episode-return threshold".into())
                })?),
                _ => None,
            };
            let keep = |r: &TransitionRecord| threshold.is_none_or(|t| r.episode_return >= t);
            let n_eff: f64 = batch.samples.iter().filter(|s| keep(s.record())).map(|s| s.count as f64).sum();
            if n_eff == 0.0 {
                return Err(AgentError::EmptyEffectiveBatch);
            }
            for (i, s) in batch.samples.iter().enumerate().filter(|(_, s)| keep(s.record())) {
                let c = s.count as f64 / n_eff;
                let row = q.row(i);
                let lse = logsumexp(row);
                out.td_loss += c * (lse - row[s.record().action]);
                for (j, &qj) in row.iter().enumerate() {
                    dq[[i, j]] += c * (qj - lse).exp();
                }
                dq[[i, s.record().action]] -= c;
            }
        }
    }

    if mode.ranked() {
        let lambda = cfg.lambda_rank;
        for (i, s) in batch.samples.iter().enumerate() {
            let rec = s.record();
            let w = success_weight(rec.return_to_go, batch.batch_mean_return_to_go, cfg);
            let c = s.count as f64 / total_draws;
            let row = q.row(i);
            let qa = row[rec.action];
            for (j, &qj) in row.iter().enumerate() {
                if j == rec.action {
                    continue;
                }
                let h = (qj - qa + cfg.margin_nu).max(0.0);
                out.rank_loss += c * w * h * h;
                if lambda != 0.0 && h > 0.0 {
                    let g = lambda * c * w * 2.0 * h;
                    dq[[i, j]] += g;
                    dq[[i, rec.action]] -= g;
                }
            }
        }
    }

    if mode == Mode::Cql {
        let alpha = cfg.cql_alpha;
        for (i, s) in batch.samples.iter().enumerate() {
            let c = s.count as f64 / total_draws;
            let row = q.row(i);
            let lse = logsumexp(row);
            out.aux_loss += alpha * c * (lse - row[s.record().action]);
            for (j, &qj) in row.iter().enumerate() {
                dq[[i, j]] += alpha * c * (qj - lse).exp();
            }
            dq[[i, s.record().action]] -= alpha * c;
        }
    }

    out.total = out.td_loss + cfg.lambda_rank * out.rank_loss * mode.ranked() as u8 as f64 + out.aux_loss;
    let grads = online.backward(&fwd, dq.view());
    Ok((out, grads))
}

/// Softmax cross-entropy of the logged actions; with `filter_threshold`,
/// only records from episodes whose return reaches it count.
pub fn bc_loss(net: &QNetwork, batch: &Minibatch, filter_threshold: Option<f64>) -> Result<(LossBreakdown, Gradients), AgentError> {
    let mode = if filter_threshold.is_some() { Mode::FilteredBc } else { Mode::Bc };
    compute_loss(net, net, batch, &LossConfig::default(), mode, filter_threshold)
}

/// Mean squared error between `Q(s, a)` and the logged return-to-go.
pub fn mc_loss(net: &QNetwork, batch: &Minibatch) -> Result<(LossBreakdown, Gradients), AgentError> {
    compute_loss(net, net, batch, &LossConfig::default(), Mode::Mc, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{bve_target, dqn_target};
    use crate::envs::Observation;
    use crate::neuralnet::{Dense, Mlp, QHead};
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: Array2<f64>) -> QNetwork {
        let n = w.nrows();
        QNetwork::from_mlp(Mlp::from_layers(vec![Dense::new(w, Array1::zeros(n)).unwrap()]).unwrap(), QHead::PerAction, n)
            .unwrap()
    }

    fn rec(state: [f64; 2], action: usize, reward: f64, terminal: bool, rtg: f64) -> TransitionRecord {
        TransitionRecord {
            episode_id: 0,
            t: 0,
            state: Observation::new(state.to_vec()),
            action,
            reward,
            next_state: Observation::new(vec![0.5, -0.5]),
            next_action: (!terminal).then_some(1),
            terminal,
            return_to_go: rtg,
            episode_return: rtg,
        }
    }

    #[test]
    fn ranking_unit_values() {
        let cfg = LossConfig::default();
        assert!((ranking_loss_terms(&[0.3, 0.3, 0.3], 1, 0.05) - 2.0 * 0.05 * 0.05).abs() < 1e-18);
        assert_eq!(ranking_loss_terms(&[1.0, 0.5, 0.95], 0, 0.05), 0.0);
        assert_eq!(success_weight(0.37, 0.37, &cfg), 1.0);
        assert_eq!(success_weight(100.0, 0.0, &cfg), 20.0);
        // 3 equal-valued actions from a zero net, unit weight
        let net = QNetwork::from_mlp(Mlp::from_layers(vec![Dense::zeros(2, 3)]).unwrap(), QHead::PerAction, 3).unwrap();
        let r = rec([1.0, 0.0], 2, 0.0, true, 0.4);
        assert!((ranking_loss(&net, &r, 0.4, &cfg) - 0.005).abs() < 1e-18);
    }

    #[test]
    fn perfect_net_has_zero_loss_and_gradient() {
        // Q(s, .) = W s; terminal records with reward equal to Q(s, a)
        let net = linear(array![[1.0, 0.0], [0.0, 1.0]]);
        let recs = vec![rec([0.7, 0.1], 0, 0.7, true, 0.0), rec([0.0, 0.3], 1, 0.3, true, 0.0)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let cfg = LossConfig { margin_nu: 0.05, ..LossConfig::default() };
        let (l, g) = compute_loss(&net, &net, &batch, &cfg, Mode::RBve, None).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_record_by_hand() {
        // Q(s, .) = W s with W = [[0.5, -1], [2, 0.25]], s = [1, 2] -> Q = [-1.5, 2.5]
        // target: terminal, r = 1, action 0 -> delta = -2.5, loss 6.25
        // dL/dQ_0 = -5 -> dW[0] = -5 s = [-5, -10], db = [-5, 0]
        let net = linear(array![[0.5, -1.0], [2.0, 0.25]]);
        let recs = vec![rec([1.0, 2.0], 0, 1.0, true, 1.0)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let (l, g) = compute_loss(&net, &net, &batch, &LossConfig::default(), Mode::Dqn, None).unwrap();
        assert!((l.td_loss - 6.25).abs() < 1e-12 && l.total == l.td_loss);
        assert_eq!(g.layers[0].0, array![[-5.0, -10.0], [0.0, 0.0]]);
        assert_eq!(g.layers[0].1, array![-5.0, 0.0]);

        // ranking: nu = 0.05, w = 1; h = Q_1 - Q_0 + nu = 4.05
        // rank = 16.4025, dQ_1 = lambda * 8.1, dQ_0 -= lambda * 8.1
        let (l, g) = compute_loss(&net, &net, &batch, &LossConfig::default(), Mode::RBve, None).unwrap();
        assert!((l.rank_loss - 4.05f64.powi(2)).abs() < 1e-12);
        assert!((l.total - (6.25 + 0.005 * 16.4025)).abs() < 1e-12);
        let d1 = 0.005 * 8.1;
        assert!((g.layers[0].1[1] - d1).abs() < 1e-12 && (g.layers[0].1[0] - (-5.0 - d1)).abs() < 1e-12);
    }

    #[test]
    fn batched_targets_match_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let online = QNetwork::mlp(2, 2, &[5], &mut rng);
        let target = QNetwork::mlp(2, 2, &[5], &mut rng);
        let recs = vec![rec([0.2, 0.9], 0, 0.1, false, 0.0), rec([-0.4, 0.3], 1, 0.0, false, 0.0), rec([0.1, 0.1], 1, 1.0, true, 0.0)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let cfg = LossConfig::default();
        for (bootstrap, double) in [(Bootstrap::Max { double: false }, false), (Bootstrap::Max { double: true }, true)] {
            let got = batch_targets(&online, &target, &batch, &cfg, bootstrap).unwrap();
            for (r, y) in recs.iter().zip(got) {
                assert_eq!(y.unwrap(), dqn_target(r, &target, &online, &cfg, double));
            }
        }
        let got = batch_targets(&online, &target, &batch, &cfg, Bootstrap::Logged).unwrap();
        for (r, y) in recs.iter().zip(got) {
            assert_eq!(y, bve_target(r, &target, &cfg));
        }
    }

    #[test]
    fn target_is_a_constant() {
        // perturbing the target net changes the loss but not the gradient path
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = QNetwork::mlp(2, 2, &[4], &mut rng);
        let target = QNetwork::mlp(2, 2, &[4], &mut rng);
        let recs = vec![rec([0.2, 0.9], 0, 0.1, false, 0.0)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let cfg = LossConfig::default();
        let (l0, g0) = compute_loss(&online, &target, &batch, &cfg, Mode::Bve, None).unwrap();
        // finite difference with respect to the online parameters only
        let base = online.network().flat_params();
        let analytic = g0.flatten();
        for i in 0..base.len() {
            let f = |d: f64| {
                let mut p = base.clone();
                p[i] += d;
                let mut o = online.clone();
                o.network_mut().set_flat_params(&p);
                compute_loss(&o, &target, &batch, &cfg, Mode::Bve, None).unwrap().0.total
            };
            let numeric = (f(1e-6) - f(-1e-6)) / 2e-6;
            assert!((numeric - analytic[i]).abs() < 1e-6);
        }
        let mut shifted = target.clone();
        shifted.network_mut().layers_mut()[1].bias += 0.3;
        let (l1, _) = compute_loss(&online, &shifted, &batch, &cfg, Mode::Bve, None).unwrap();
        assert_ne!(l0.total, l1.total);
    }

    #[test]
    fn skipped_tails() {
        let net = linear(array![[1.0, 0.0], [0.0, 1.0]]);
        let mut tail = rec([0.1, 0.2], 0, 0.0, false, 0.0);
        tail.next_action = None;
        let recs = vec![tail];
        let batch = Minibatch::from_records(&recs).unwrap();
        assert_eq!(
            compute_loss(&net, &net, &batch, &LossConfig::default(), Mode::Bve, None).unwrap_err(),
            AgentError::EmptyEffectiveBatch
        );
        // DQN bootstraps through the same tail
        assert!(compute_loss(&net, &net, &batch, &LossConfig::default(), Mode::Dqn, None).is_ok());
    }

    #[test]
    fn bc_and_mc_values() {
        let zero = QNetwork::from_mlp(Mlp::from_layers(vec![Dense::zeros(2, 3)]).unwrap(), QHead::PerAction, 3).unwrap();
        let recs = vec![rec([0.3, 0.4], 1, 0.0, true, 1.0), rec([0.1, 0.2], 2, 0.0, true, 1.0)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let (l, _) = bc_loss(&zero, &batch, None).unwrap();
        assert!((l.td_loss - 3f64.ln()).abs() < 1e-15);
        assert_eq!(bc_loss(&zero, &batch, Some(2.0)).unwrap_err(), AgentError::EmptyEffectiveBatch);
        let (l, _) = mc_loss(&zero, &batch).unwrap();
        assert_eq!(l.td_loss, 1.0);

        // errors {0.1, -0.3} -> 0.05
        let net = linear(array![[1.0, 0.0], [0.0, 1.0]]);
        let recs = vec![rec([0.6, 0.0], 0, 0.0, true, 0.5), rec([0.0, 0.2], 1, 0.0, true, 0.5)];
        let (l, _) = mc_loss(&net, &Minibatch::from_records(&recs).unwrap()).unwrap();
        assert!((l.td_loss - 0.05).abs() < 1e-15);

        // confident correct logits
        let sharp = linear(array![[0.0, 0.0], [100.0, 0.0]]);
        let recs = vec![rec([1.0, 0.0], 1, 0.0, true, 0.0)];
        let (l, _) = bc_loss(&sharp, &Minibatch::from_records(&recs).unwrap(), None).unwrap();
        assert!(l.td_loss < 1e-40);
    }

    #[test]
    fn cql_regularizer_values() {
        let cfg = LossConfig::default();
        let zero = QNetwork::from_mlp(Mlp::from_layers(vec![Dense::zeros(2, 4)]).unwrap(), QHead::PerAction, 4).unwrap();
        let recs = vec![rec([0.3, 0.4], 1, 0.0, true, 0.0)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let (l, _) = compute_loss(&zero, &zero, &batch, &cfg, Mode::Cql, None).unwrap();
        assert!((l.aux_loss - 0.01 * 4f64.ln()).abs() < 1e-15);

        // Q = [0.7, 0.2], a = 0: alpha * (ln(e^0.7 + e^0.2) - 0.7)
        let net = linear(array![[0.7, 0.0], [0.0, 0.2]]);
        let recs = vec![rec([1.0, 1.0], 0, 0.0, true, 0.0)];
        let (l, _) = compute_loss(&net, &net, &Minibatch::from_records(&recs).unwrap(), &cfg, Mode::Cql, None).unwrap();
        let expected = 0.01 * ((0.7f64.exp() + 0.2f64.exp()).ln() - 0.7);
        assert!((l.aux_loss - expected).abs() < 1e-10);
    }

    #[test]
    fn lambda_zero_reductions_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let online = QNetwork::mlp(2, 2, &[6], &mut rng);
        let target = QNetwork::mlp(2, 2, &[6], &mut rng);
        let recs = vec![rec([0.2, 0.9], 0, 0.1, false, 0.3), rec([-0.4, 0.3], 1, 0.0, true, -0.2)];
        let batch = Minibatch::from_records(&recs).unwrap();
        let cfg = LossConfig { lambda_rank: 0.0, ..LossConfig::default() };
        let (a, ga) = compute_loss(&online, &target, &batch, &cfg, Mode::RBve, None).unwrap();
        let (b, gb) = compute_loss(&online, &target, &batch, &cfg, Mode::Bve, None).unwrap();
        assert_eq!((a.total, ga), (b.total, gb));
        let (a, ga) = compute_loss(&online, &target, &batch, &cfg, Mode::RDqn, None).unwrap();
        let (b, gb) = compute_loss(&online, &target, &batch, &cfg, Mode::Ddqn, None).unwrap();
        assert_eq!((a.total, ga), (b.total, gb));
    }
}
