use super::TabularError;

const SUM_TOLERANCE: f64 = 1e-12;

/// Explicit finite MDP with dense transition tensor `P[s][a][s']`.
///
/// Terminal states are absorbing: every action self-loops with reward 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    initial: Vec<f64>,
}

impl TabularMdp {
    pub fn builder(num_states: usize, num_actions: usize, gamma: f64) -> TabularMdpBuilder {
        TabularMdpBuilder {
            num_states,
            num_actions,
            gamma,
            transitions: vec![0.0; num_states * num_actions * num_states],
            rewards: vec![0.0; num_states * num_actions],
            terminal: vec![false; num_states],
            initial: None,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// Probability vector over next states for `(s, a)`.
    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// Successor of a deterministic `(s, a)` pair, `None` if the row has more
    /// than one non-zero entry.
    pub fn deterministic_next(&self, s: usize, a: usize) -> Option<usize> {
        let row = self.next_distribution(s, a);
        let mut found = None;
        for (next, &p) in row.iter().enumerate() {
            if p != 0.0 {
                if p != 1.0 || found.is_some() {
                    return None;
                }
                found = Some(next);
            }
        }
        found
    }

    /// Expected value of `values` under the initial distribution.
    pub fn start_value(&self, values: &[f64]) -> f64 {
        self.initial.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Incremental construction of a [`TabularMdp`]; validated on [`build`].
///
/// [`build`]: TabularMdpBuilder::build
#[derive(Debug, Clone)]
pub struct TabularMdpBuilder {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    initial: Option<Vec<f64>>,
}

impl TabularMdpBuilder {
    /// Adds `p` to `P[s][a][next]`.
    pub fn transition(mut self, s: usize, a: usize, next: usize, p: f64) -> Self {
        let idx = (s * self.num_actions + a) * self.num_states + next;
        self.transitions[idx] += p;
        self
    }

    pub fn reward(mut self, s: usize, a: usize, r: f64) -> Self {
        self.rewards[s * self.num_actions + a] = r;
        self
    }

    pub fn terminal(mut self, s: usize) -> Self {
        self.terminal[s] = true;
        self
    }

    pub fn start(mut self, s: usize) -> Self {
        let mut init = vec![0.0; self.num_states];
        init[s] = 1.0;
        self.initial = Some(init);
        self
    }

    pub fn initial_distribution(mut self, dist: Vec<f64>) -> Self {
        self.initial = Some(dist);
        self
    }

    fn check_index(&self) -> Result<(), TabularError> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(TabularError::InvalidMdp("empty state or action set".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TabularError::InvalidMdp(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn build(mut self) -> Result<TabularMdp, TabularError> {
        self.check_index()?;
        let (ns, na) = (self.num_states, self.num_actions);
        for s in 0..ns {
            for a in 0..na {
                let base = (s * na + a) * ns;
                let row = &mut self.transitions[base..base + ns];
                if self.terminal[s] {
                    let untouched = row.iter().all(|&p| p == 0.0);
                    let self_loop = row.iter().enumerate().all(|(i, &p)| p == if i == s { 1.0 } else { 0.0 });
                    if !(untouched || self_loop) || self.rewards[s * na + a] != 0.0 {
                        return Err(TabularError::InvalidMdp(format!(
                            "terminal state {s} must self-loop with reward 0"
                        )));
                    }
                    row.iter_mut().for_each(|p| *p = 0.0);
                    row[s] = 1.0;
                    continue;
                }
                if row.iter().any(|&p| !(0.0..=1.0 + SUM_TOLERANCE).contains(&p)) {
                    return Err(TabularError::InvalidMdp(format!("bad probability at ({s}, {a})")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SUM_TOLERANCE {
                    return Err(TabularError::InvalidMdp(format!(
                        "P[{s}][{a}] sums to {sum}, expected 1"
                    )));
                }
                if !self.rewards[s * na + a].is_finite() {
                    return Err(TabularError::InvalidMdp(format!("non-finite reward at ({s}, {a})")));
                }
            }
        }
        let initial = self.initial.unwrap_or_else(|| {
            let mut v = vec![0.0; ns];
            v[0] = 1.0;
            v
        });
        if initial.len() != ns || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TabularError::InvalidMdp("initial distribution must sum to 1".into()));
        }
        Ok(TabularMdp {
            num_states: ns,
            num_actions: na,
            transitions: self.transitions,
            rewards: self.rewards,
            terminal: self.terminal,
            gamma: self.gamma,
            initial,
        })
    }
}

/// Stochastic policy table `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states] }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self, TabularError> {
        for (s, row) in probs.iter().enumerate() {
            if row.iter().any(|&p| p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(TabularError::InvalidPolicy(format!("row {s} is not a distribution")));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    /// The action of a deterministic row (first action with the largest mass).
    pub fn action(&self, s: usize) -> usize {
        argmax(&self.probs[s])
    }
}

/// Exact value tables of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rows_not_summing_to_one() {
        let err = TabularMdp::builder(2, 1, 0.9).transition(0, 0, 1, 0.5).terminal(1).build();
        assert!(matches!(err, Err(TabularError::InvalidMdp(_))));
    }

    #[test]
    fn terminal_states_self_loop() {
        let mdp = TabularMdp::builder(2, 2, 0.9)
            .transition(0, 0, 1, 1.0)
            .transition(0, 1, 0, 1.0)
            .terminal(1)
            .build()
            .unwrap();
        assert_eq!(mdp.next_distribution(1, 1), &[0.0, 1.0]);
        assert_eq!(mdp.deterministic_next(0, 0), Some(1));
        let bad = TabularMdp::builder(2, 1, 0.9).transition(0, 0, 1, 1.0).terminal(1).reward(1, 0, 1.0).build();
        assert!(bad.is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.7]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
