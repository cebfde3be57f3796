//! Per-record bootstrap targets. The training losses compute the same
//! quantities in batches; these scalar forms are the reference.

use super::{AgentError, LossConfig};
use crate::datastore::TransitionRecord;
use crate::neuralnet::QNetwork;
use crate::tabular::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bootstrap {
    /// `max_a' Q'(s', a')`, or with `double` the target value of the online
    /// network's argmax.
    Max { double: bool },
    /// `Q'(s', a')` at the logged next action.
    Logged,
}

fn q(net: &QNetwork, obs: &[f64]) -> Vec<f64> {
    net.q_values(obs).expect("observation width matches the network")
}

/// `r + gamma max_a' Q'(s', a')` (or the double variant), `r` when terminal.
pub fn dqn_target(record: &TransitionRecord, target: &QNetwork, online: &QNetwork, cfg: &LossConfig, double: bool) -> f64 {
    if record.terminal {
        return record.reward;
    }
    record.reward + cfg.gamma * max_bootstrap(&record.next_state, target, online, double)
}

fn max_bootstrap(next: &[f64], target: &QNetwork, online: &QNetwork, double: bool) -> f64 {
    let qt = q(target, next);
    if double {
        qt[argmax(&q(online, next))]
    } else {
        qt[argmax(&qt)]
    }
}

/// `r + gamma Q'(s', a')` at the logged `a'`; `None` (skip) on a cut-off
/// tail without a successor action.
pub fn bve_target(record: &TransitionRecord, target: &QNetwork, cfg: &LossConfig) -> Option<f64> {
    if record.terminal {
        return Some(record.reward);
    }
    let next_action = record.next_action?;
    Some(record.reward + cfg.gamma * q(target, &record.next_state)[next_action])
}

/// `sum_{k<m} gamma^k r_k + gamma^m bootstrap(s_m)` over the first
/// `min(n, steps to terminal)` records of `window`.
pub fn n_step_target(
    window: &[TransitionRecord],
    target: &QNetwork,
    online: &QNetwork,
    cfg: &LossConfig,
    bootstrap: Bootstrap,
) -> Result<Option<f64>, AgentError> {
    let window = &window[..window.len().min(cfg.n_step)];
    let (m, ret) = discounted_prefix(window, cfg.gamma)?;
    let last = &window[m - 1];
    if last.terminal {
        return Ok(Some(ret));
    }
    let discount = cfg.gamma.powi(m as i32);
    Ok(match bootstrap {
        Bootstrap::Max { double } => Some(ret + discount * max_bootstrap(&last.next_state, target, online, double)),
        Bootstrap::Logged => last.next_action.map(|a| ret + discount * q(target, &last.next_state)[a]),
    })
}

/// Number of steps used and their discounted reward sum; stops after the
/// first terminal record.
pub(crate) fn discounted_prefix(window: &[TransitionRecord], gamma: f64) -> Result<(usize, f64), AgentError> {
    let first = window.first().ok_or(AgentError::WindowNotContiguous)?;
    let mut ret = 0.0;
    let mut discount = 1.0;
    for (k, rec) in window.iter().enumerate() {
        if k > 0 {
            let prev = &window[k - 1];
            if rec.episode_id != first.episode_id || rec.t != first.t + k as u32 || prev.next_action != Some(rec.action)
            {
                return Err(AgentError::WindowNotContiguous);
            }
        }
        ret += discount * rec.reward;
        discount *= gamma;
        if rec.terminal {
            return Ok((k + 1, ret));
        }
    }
    Ok((window.len(), ret))
}
