//! Exact finite-MDP machinery: policy evaluation by linear solve, greedy
//! improvement, value iteration, and the one-step-improvement checks.

mod format;
mod one_step;
mod mdp;
mod solve;

pub use format::{mdp_from_json, mdp_to_json, RewardEntry, TabularMdpFile, TransitionEntry};
pub use one_step::{check_lemma1_premise, one_step_rollouts, Lemma1Report, RolloutOutcome};
pub use mdp::{argmax, TabularMdp, TabularMdpBuilder, TabularPolicy, ValueTables};
pub use solve::{evaluate_policy, greedy_improve, optimal_actions, solve_linear, value_iteration};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TabularError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("policy and MDP shapes differ")]
    ShapeMismatch,
    #[error("linear system is singular (undiscounted policy that never terminates?)")]
    SingularSystem,
    #[error("value iteration did not converge in {max_iters} iterations")]
    NonConvergence { max_iters: usize },
    #[error("structure violation: {0}")]
    StructureViolation(String),
}

/// Headline start-state values of the one-step improvement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementSummary {
    pub uniform: f64,
    pub one_step: f64,
    pub optimal: f64,
}

impl ImprovementSummary {
    /// Fraction of the `optimal - uniform` gap recovered by one greedy step.
    pub fn recovered_fraction(&self) -> f64 {
        (self.one_step - self.uniform) / (self.optimal - self.uniform)
    }
}

/// Evaluates the uniform policy, its greedy improvement, and the optimum.
pub fn improvement_summary(mdp: &TabularMdp) -> Result<(ImprovementSummary, ValueTables, TabularPolicy, ValueTables), TabularError> {
    let uniform = evaluate_policy(mdp, &TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()))?;
    let improved = greedy_improve(&uniform);
    let one_step = evaluate_policy(mdp, &improved)?;
    let optimal = value_iteration(mdp, 1e-12, 1_000_000)?;
    let summary = ImprovementSummary {
        uniform: mdp.start_value(&uniform.v),
        one_step: mdp.start_value(&one_step.v),
        optimal: mdp.start_value(&optimal.v),
    };
    Ok((summary, uniform, improved, optimal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{GridWorld, TabularModel};

    #[test]
    fn shipped_grid_ordering() {
        let mdp = GridWorld::shipped().tabular_model(0.99);
        let (s, ..) = improvement_summary(&mdp).unwrap();
        assert!(s.uniform < s.one_step && s.one_step <= s.optimal + 1e-9, "{s:?}");
    }
}
