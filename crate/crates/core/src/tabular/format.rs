//! JSON description of a [`TabularMdp`] with a sparse transition list.
//!
//! ```json
//! {
//!   "num_states": 3, "num_actions": 2, "gamma": 0.9, "start": 0,
//!   "terminal": [false, false, true],
//!   "transitions": [{"state": 0, "action": 1, "next": 1, "prob": 1.0}],
//!   "rewards": [{"state": 1, "action": 0, "reward": 1.0}]
//! }
//! ```
//!
//! Rewards default to 0. Rows of terminal states may be omitted.

use serde::{Deserialize, Serialize};

use super::mdp::TabularMdp;
use super::TabularError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub state: usize,
    pub action: usize,
    pub next: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_distribution: Option<Vec<f64>>,
    #[serde(default)]
    pub terminal: Vec<bool>,
    pub transitions: Vec<TransitionEntry>,
    #[serde(default)]
    pub rewards: Vec<RewardEntry>,
}

impl TabularMdpFile {
    pub fn into_mdp(self) -> Result<TabularMdp, TabularError> {
        let (ns, na) = (self.num_states, self.num_actions);
        let in_range = |s: usize, a: usize| s < ns && a < na;
        let mut b = TabularMdp::builder(ns, na, self.gamma);
        if !self.terminal.is_empty() && self.terminal.len() != ns {
            return Err(TabularError::InvalidMdp("terminal flags length differs from num_states".into()));
        }
        for (s, _) in self.terminal.iter().enumerate().filter(|(_, &t)| t) {
            b = b.terminal(s);
        }
        for t in &self.transitions {
            if !in_range(t.state, t.action) || t.next >= ns {
                return Err(TabularError::InvalidMdp(format!("transition {t:?} out of range")));
            }
            b = b.transition(t.state, t.action, t.next, t.prob);
        }
        for r in &self.rewards {
            if !in_range(r.state, r.action) {
                return Err(TabularError::InvalidMdp(format!("reward {r:?} out of range")));
            }
            b = b.reward(r.state, r.action, r.reward);
        }
        b = match (self.start, self.initial_distribution) {
            (Some(s), None) if s < ns => b.start(s),
            (None, Some(d)) => b.initial_distribution(d),
            (None, None) => b,
            _ => return Err(TabularError::InvalidMdp("give exactly one valid start or initial_distribution".into())),
        };
        b.build()
    }

    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
            for a in 0..na {
                for (next, &prob) in mdp.next_distribution(s, a).iter().enumerate() {
                    if prob != 0.0 {
                        transitions.push(TransitionEntry { state: s, action: a, next, prob });
                    }
                }
                if mdp.reward(s, a) != 0.0 {
                    rewards.push(RewardEntry { state: s, action: a, reward: mdp.reward(s, a) });
                }
            }
        }
        Self {
            num_states: ns,
            num_actions: na,
            gamma: mdp.gamma(),
            start: None,
            initial_distribution: Some(mdp.initial_distribution().to_vec()),
            terminal: mdp.terminal_mask().to_vec(),
            transitions,
            rewards,
        }
    }
}

pub fn mdp_from_json(text: &str) -> Result<TabularMdp, TabularError> {
    let file: TabularMdpFile =
        serde_json::from_str(text).map_err(|e| TabularError::InvalidMdp(format!("json: {e}")))?;
    file.into_mdp()
}

pub fn mdp_to_json(mdp: &TabularMdp) -> String {
    serde_json::to_string_pretty(&TabularMdpFile::from_mdp(mdp)).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{GridWorld, TabularModel};

    #[test]
    fn round_trips_through_json() {
        let mdp = GridWorld::shipped().tabular_model(0.99);
        let back = mdp_from_json(&mdp_to_json(&mdp)).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn parses_documented_example() {
        let text = r#"{
          "num_states": 3, "num_actions": 2, "gamma": 0.9, "start": 0,
          "terminal": [false, false, true],
          "transitions": [
            {"state": 0, "action": 0, "next": 0, "prob": 1.0},
            {"state": 0, "action": 1, "next": 1, "prob": 1.0},
            {"state": 1, "action": 0, "next": 2, "prob": 1.0},
            {"state": 1, "action": 1, "next": 2, "prob": 1.0}
          ],
          "rewards": [{"state": 1, "action": 0, "reward": 1.0}, {"state": 1, "action": 1, "reward": 1.0}]
        }"#;
        let mdp = mdp_from_json(text).unwrap();
        assert_eq!(mdp.reward(1, 1), 1.0);
        assert!(mdp.is_terminal(2));
        assert!(mdp_from_json("{\"num_states\": 1}").is_err());
    }
}
