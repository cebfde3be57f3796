//! Offline transition datasets: logging from a behavior policy, discounted
//! returns-to-go, episode-level subsampling and return splits, and the
//! `BVED` binary file format.

mod io;
mod logging;

pub use io::{load, save, to_bytes, from_bytes, DATASET_MAGIC, DATASET_VERSION};
pub use logging::{log_episodes, BehaviorPolicy, FixedPolicy, LoggedStep, UniformPolicy};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::EnvelopeError;
use crate::envs::{EnvError, EnvSpec, Observation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("episode has no transitions")]
    EmptyEpisode,
    #[error("dataset has no episodes")]
    EmptyDataset,
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("unsupported file format: {0}")]
    FormatVersionMismatch(String),
    #[error("checksum mismatch (truncated or corrupted file)")]
    ChecksumMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl From<EnvelopeError> for DatasetError {
    fn from(e: EnvelopeError) -> Self {
        match e {
            EnvelopeError::ChecksumMismatch => Self::ChecksumMismatch,
            e @ EnvelopeError::FormatVersionMismatch { .. } => Self::FormatVersionMismatch(e.to_string()),
            other => Self::Inconsistent(other.to_string()),
        }
    }
}

/// One logged step `(s, a, r, s', a')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub episode_id: u32,
    pub t: u32,
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    /// `None` at terminal steps and at the last step of a cut-off log.
    pub next_action: Option<usize>,
    pub terminal: bool,
    /// Discounted with the dataset's gamma.
    pub return_to_go: f64,
    /// Undiscounted return of the whole episode.
    pub episode_return: f64,
}

impl TransitionRecord {
    /// Cut-off tail: no terminal, no logged successor action.
    pub fn is_truncated_tail(&self) -> bool {
        !self.terminal && self.next_action.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env_spec: EnvSpec,
    /// Discount used for `return_to_go`.
    pub gamma: f64,
    pub noise_epsilon: f64,
    pub generator_description: String,
    pub num_episodes: usize,
    pub num_transitions: usize,
    /// Product of all subsampling fractions applied so far.
    pub subsample_fraction: f64,
    /// Mean undiscounted return of the generating policy over the last tenth
    /// of the generation run, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_reference_return: Option<f64>,
}

/// Raw form of one episode before annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode_id: u32,
    /// `T + 1` observations, the last one after the final action.
    pub states: Vec<Observation>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// The final step reached a terminal state.
    pub terminal: bool,
    /// Successor action after the final step, for logs cut in mid-episode.
    pub final_next_action: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    episodes: Vec<Vec<TransitionRecord>>,
}

/// Backward pass `G_t = r_t + gamma G_{t+1}`, with `G_T = r_T` on the last
/// step.
pub fn compute_return_to_go(episode: &mut [TransitionRecord], gamma: f64) -> Result<(), DatasetError> {
    if episode.is_empty() {
        return Err(DatasetError::EmptyEpisode);
    }
    let mut acc = 0.0;
    for rec in episode.iter_mut().rev() {
        acc = rec.reward + gamma * acc;
        rec.return_to_go = acc;
    }
    Ok(())
}

fn annotate(log: EpisodeLog, gamma: f64, obs_dim: usize) -> Result<Vec<TransitionRecord>, DatasetError> {
    let steps = log.actions.len();
    if steps == 0 {
        return Err(DatasetError::EmptyEpisode);
    }
    if log.states.len() != steps + 1 || log.rewards.len() != steps {
        return Err(DatasetError::Inconsistent(format!(
            "episode {}: {} states, {} actions, {} rewards",
            log.episode_id,
            log.states.len(),
            steps,
            log.rewards.len()
        )));
    }
    if let Some(bad) = log.states.iter().find(|s| s.len() != obs_dim || s.iter().any(|x| !x.is_finite())) {
        return Err(DatasetError::Inconsistent(format!("observation {bad:?} does not fit dimension {obs_dim}")));
    }
    if log.terminal && log.final_next_action.is_some() {
        return Err(DatasetError::Inconsistent("terminal step with a successor action".into()));
    }
    let states: Vec<Observation> = log.states.iter().map(Observation::quantized).collect();
    let episode_return: f64 = log.rewards.iter().sum();
    let mut records: Vec<TransitionRecord> = (0..steps)
        .map(|t| {
            let last = t + 1 == steps;
            TransitionRecord {
                episode_id: log.episode_id,
                t: t as u32,
                state: states[t].clone(),
                action: log.actions[t],
                reward: log.rewards[t],
                next_state: states[t + 1].clone(),
                next_action: if last { log.final_next_action } else { Some(log.actions[t + 1]) },
                terminal: last && log.terminal,
                return_to_go: 0.0,
                episode_return,
            }
        })
        .collect();
    compute_return_to_go(&mut records, gamma)?;
    Ok(records)
}

impl Dataset {
    pub fn from_logs(
        env_spec: EnvSpec,
        gamma: f64,
        noise_epsilon: f64,
        generator_description: impl Into<String>,
        logs: Vec<EpisodeLog>,
    ) -> Result<Self, DatasetError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(DatasetError::Inconsistent(format!("gamma {gamma} outside [0, 1]")));
        }
        let dim = env_spec.observation_dim;
        let num_actions = env_spec.num_actions;
        if logs.iter().flat_map(|l| l.actions.iter().chain(&l.final_next_action)).any(|&a| a >= num_actions) {
            return Err(DatasetError::Inconsistent("action index out of range".into()));
        }
        let episodes = logs.into_iter().map(|l| annotate(l, gamma, dim)).collect::<Result<Vec<_>, _>>()?;
        let header = DatasetHeader {
            env_spec,
            gamma,
            noise_epsilon,
            generator_description: generator_description.into(),
            num_episodes: 0,
            num_transitions: 0,
            subsample_fraction: 1.0,
            behavior_reference_return: None,
        };
        Ok(Self::with_episodes(header, episodes))
    }

    fn with_episodes(mut header: DatasetHeader, episodes: Vec<Vec<TransitionRecord>>) -> Self {
        header.num_episodes = episodes.len();
        header.num_transitions = episodes.iter().map(Vec::len).sum();
        Self { header, episodes }
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn episodes(&self) -> &[Vec<TransitionRecord>] {
        &self.episodes
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.header.num_transitions
    }

    pub fn records(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.episodes.iter().flatten()
    }

    /// `(episode, step)` position of every transition, in storage order.
    pub fn transition_index(&self) -> Vec<(u32, u32)> {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.len() as u32).map(move |t| (e as u32, t)))
            .collect()
    }

    /// Up to `n` consecutive records of one episode starting at `(episode, t)`.
    pub fn window(&self, episode: usize, t: usize, n: usize) -> &[TransitionRecord] {
        let ep = &self.episodes[episode];
        &ep[t..(t + n).min(ep.len())]
    }

    /// Records the mean return of the final tenth of episodes (at least
    /// one) as the behavior reference.
    pub fn record_behavior_reference(&mut self) {
        let r = self.episode_returns();
        let tail = &r[r.len() - (r.len() / 10).max(1).min(r.len())..];
        self.header.behavior_reference_return = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
    }

    /// Undiscounted return per episode.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|ep| ep[0].episode_return).collect()
    }

    pub fn mean_episode_return(&self) -> Option<f64> {
        let r = self.episode_returns();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    /// Keeps `ceil(fraction * N)` whole episodes drawn without replacement,
    /// in their original order.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self, DatasetError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DatasetError::InvalidFraction(fraction));
        }
        let n = self.episodes.len();
        let keep = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1.min(n), n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = rand::seq::index::sample(&mut rng, n, keep).into_vec();
        chosen.sort_unstable();
        let mut header = self.header.clone();
        header.subsample_fraction *= fraction;
        Ok(Self::with_episodes(header, chosen.into_iter().map(|i| self.episodes[i].clone()).collect()))
    }

    /// Episodes whose undiscounted return is below the dataset mean, and the
    /// rest. Returns within `1e-12` (relative) of the mean count as not below.
    pub fn split_by_episodic_return(&self) -> Result<(Self, Self), DatasetError> {
        let mean = self.mean_episode_return().ok_or(DatasetError::EmptyDataset)?;
        let tol = 1e-12 * mean.abs().max(1.0);
        let (below, above): (Vec<_>, Vec<_>) =
            self.episodes.iter().cloned().partition(|ep| ep[0].episode_return < mean - tol);
        Ok((Self::with_episodes(self.header.clone(), below), Self::with_episodes(self.header.clone(), above)))
    }

    /// Re-derives every annotation and checks the structural invariants.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let h = &self.header;
        if h.num_episodes != self.episodes.len() || h.num_transitions != self.records().count() {
            return Err(DatasetError::Inconsistent("header counts differ from body".into()));
        }
        for ep in &self.episodes {
            let mut expected = ep.clone();
            compute_return_to_go(&mut expected, h.gamma)?;
            let ret: f64 = ep.iter().map(|r| r.reward).sum();
            for (i, (got, want)) in ep.iter().zip(&expected).enumerate() {
                let scale = want.return_to_go.abs().max(1.0);
                if (got.return_to_go - want.return_to_go).abs() > 1e-9 * scale {
                    return Err(DatasetError::Inconsistent(format!(
                        "episode {} step {i}: return-to-go {} breaks the recursion (expected {})",
                        got.episode_id, got.return_to_go, want.return_to_go
                    )));
                }
                if got.episode_return != ret || got.t as usize != i {
                    return Err(DatasetError::Inconsistent(format!("episode {} step {i} annotations", got.episode_id)));
                }
            }
            for pair in ep.windows(2) {
                if pair[0].next_state != pair[1].state || pair[0].next_action != Some(pair[1].action) || pair[0].terminal {
                    return Err(DatasetError::Inconsistent(format!("episode {} is not contiguous", pair[0].episode_id)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_spec() -> EnvSpec {
        EnvSpec { name: "toy".into(), observation_dim: 1, num_actions: 2, max_episode_length: 10 }
    }

    pub(crate) fn log(id: u32, rewards: &[f64], terminal: bool) -> EpisodeLog {
        EpisodeLog {
            episode_id: id,
            states: (0..=rewards.len()).map(|i| Observation::new(vec![i as f64 * 0.1])).collect(),
            actions: (0..rewards.len()).map(|i| i % 2).collect(),
            rewards: rewards.to_vec(),
            terminal,
            final_next_action: None,
        }
    }

    fn rtg(rewards: &[f64], gamma: f64) -> Vec<f64> {
        let d = Dataset::from_logs(toy_spec(), gamma, 0.0, "t", vec![log(0, rewards, true)]).unwrap();
        d.records().map(|r| r.return_to_go).collect()
    }

    #[test]
    fn return_to_go_backward_recursion() {
        let g = rtg(&[0.0, 0.0, 1.0], 0.99);
        assert!((g[0] - 0.9801).abs() < 1e-15 && g[1] == 0.99 && g[2] == 1.0, "{g:?}");
        assert_eq!(rtg(&[1.0], 0.7), vec![1.0]);
        assert_eq!(rtg(&[1.0, 1.0, 1.0], 0.0), vec![1.0, 1.0, 1.0]);
        assert!(matches!(compute_return_to_go(&mut [], 0.9), Err(DatasetError::EmptyEpisode)));
    }

    #[test]
    fn return_to_go_is_idempotent() {
        let d = Dataset::from_logs(toy_spec(), 0.9, 0.0, "t", vec![log(0, &[0.5, -1.0, 2.0], true)]).unwrap();
        let mut ep = d.episodes()[0].clone();
        compute_return_to_go(&mut ep, 0.9).unwrap();
        assert_eq!(ep, d.episodes()[0]);
    }

    #[test]
    fn successor_links_and_tails() {
        let mut cut = log(1, &[0.0, 0.0], false);
        cut.final_next_action = Some(1);
        let d = Dataset::from_logs(toy_spec(), 0.9, 0.0, "t", vec![log(0, &[0.0, 1.0], false), cut]).unwrap();
        let eps = d.episodes();
        assert_eq!(eps[0][0].next_action, Some(eps[0][1].action));
        assert!(eps[0][1].is_truncated_tail());
        assert_eq!(eps[1][1].next_action, Some(1));
        assert!(!eps[1][1].is_truncated_tail());
        d.validate().unwrap();
    }

    #[test]
    fn subsample_keeps_whole_episodes() {
        let logs = (0..200).map(|i| log(i, &vec![1.0; 1 + i as usize % 7], true)).collect();
        let d = Dataset::from_logs(toy_spec(), 0.99, 0.25, "t", logs).unwrap();
        assert_eq!(d.subsample(1.0, 3).unwrap(), d);
        let s = d.subsample(0.1, 3).unwrap();
        assert_eq!(s.num_episodes(), 20);
        assert_eq!(s, d.subsample(0.1, 3).unwrap());
        assert_eq!(s.header().subsample_fraction, 0.1);
        for ep in s.episodes() {
            assert_eq!(ep, &d.episodes()[ep[0].episode_id as usize]);
        }
        s.validate().unwrap();
        assert_eq!(d.subsample(0.01, 1).unwrap().num_episodes(), 2);
        assert!(matches!(d.subsample(0.0, 1), Err(DatasetError::InvalidFraction(_))));
    }

    #[test]
    fn split_by_return() {
        let d = Dataset::from_logs(toy_spec(), 1.0, 0.0, "t", vec![log(0, &[0.0], true), log(1, &[10.0], true)]).unwrap();
        let (lo, hi) = d.split_by_episodic_return().unwrap();
        assert_eq!(lo.episode_returns(), vec![0.0]);
        assert_eq!(hi.episode_returns(), vec![10.0]);

        let same = (0..3).map(|i| log(i, &[0.1], true)).collect();
        let d = Dataset::from_logs(toy_spec(), 1.0, 0.0, "t", same).unwrap();
        let (lo, hi) = d.split_by_episodic_return().unwrap();
        assert_eq!((lo.num_episodes(), hi.num_episodes()), (0, 3));
    }
}
