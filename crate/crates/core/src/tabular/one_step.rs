//! Sufficient conditions under which a single greedy step on the exact
//! behavior value function is already optimal, for deterministic episodic
//! MDPs whose terminating transitions pay one of two values `{low, high}`.

use super::mdp::{TabularMdp, TabularPolicy};
use super::solve::{evaluate_policy, greedy_improve};
use super::TabularError;

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// Deterministic, finite-horizon, and the behavior policy reaches a
    /// `high` terminal with positive probability from every witness state.
    pub holds: bool,
    pub finite_horizon: bool,
    /// States from which some action sequence earns `high`.
    pub witness_states: Vec<usize>,
    /// Witness states from which the behavior policy can never earn `high`.
    pub behavior_gaps: Vec<usize>,
}

/// Checks the premise. Fails with [`TabularError::StructureViolation`] when
/// the MDP is stochastic or its rewards are not `0` on interior transitions
/// and `low`/`high` on terminating ones.
pub fn check_lemma1_premise(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    low: f64,
    high: f64,
) -> Result<Lemma1Report, TabularError> {
    if low >= high {
        return Err(TabularError::StructureViolation(format!("need low < high, got {low} >= {high}")));
    }
    if behavior.num_states() != mdp.num_states() {
        return Err(TabularError::ShapeMismatch);
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut next = vec![vec![0usize; na]; ns];
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..na {
            let n = mdp.deterministic_next(s, a).ok_or_else(|| {
                TabularError::StructureViolation(format!("transition ({s}, {a}) is stochastic"))
            })?;
            let r = mdp.reward(s, a);
            let ok = if mdp.is_terminal(n) { r == low || r == high } else { r == 0.0 };
            if !ok {
                return Err(TabularError::StructureViolation(format!(
                    "reward {r} at ({s}, {a}) outside the two-outcome structure"
                )));
            }
            next[s][a] = n;
        }
    }

    let finite_horizon = is_acyclic(mdp, &next);
    let pays_high = |s: usize, a: usize| mdp.is_terminal(next[s][a]) && mdp.reward(s, a) == high;
    let witness = backward_closure(mdp, &next, pays_high, |_, _| true);
    let behavior_reach = backward_closure(mdp, &next, pays_high, |s, a| behavior.probs(s)[a] > 0.0);

    let witness_states: Vec<usize> = (0..ns).filter(|&s| witness[s]).collect();
    let behavior_gaps: Vec<usize> = witness_states.iter().copied().filter(|&s| !behavior_reach[s]).collect();
    Ok(Lemma1Report {
        holds: finite_horizon && behavior_gaps.is_empty(),
        finite_horizon,
        witness_states,
        behavior_gaps,
    })
}

/// Marks states from which an allowed action either pays `high` or leads to
/// an already-marked state, iterated to a fixed point.
fn backward_closure(
    mdp: &TabularMdp,
    next: &[Vec<usize>],
    pays_high: impl Fn(usize, usize) -> bool,
    allowed: impl Fn(usize, usize) -> bool,
) -> Vec<bool> {
    let ns = mdp.num_states();
    let mut marked = vec![false; ns];
    loop {
        let mut changed = false;
        for s in 0..ns {
            if mdp.is_terminal(s) || marked[s] {
                continue;
            }
            let hit = (0..mdp.num_actions())
                .filter(|&a| allowed(s, a))
                .any(|a| pays_high(s, a) || (!mdp.is_terminal(next[s][a]) && marked[next[s][a]]));
            if hit {
                marked[s] = true;
                changed = true;
            }
        }
        if !changed {
            return marked;
        }
    }
}

fn is_acyclic(mdp: &TabularMdp, next: &[Vec<usize>]) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let ns = mdp.num_states();
    let mut mark = vec![Mark::New; ns];
    for root in 0..ns {
        if mark[root] != Mark::New || mdp.is_terminal(root) {
            continue;
        }
        // iterative DFS: (state, next action to explore)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (s, ref mut a)) = stack.last_mut() {
            if *a == mdp.num_actions() {
                mark[s] = Mark::Done;
                stack.pop();
                continue;
            }
            let n = next[s][*a];
            *a += 1;
            if mdp.is_terminal(n) {
                continue;
            }
            match mark[n] {
                Mark::Open => return false,
                Mark::New => {
                    mark[n] = Mark::Open;
                    stack.push((n, 0));
                }
                Mark::Done => {}
            }
        }
    }
    true
}

/// Outcome of rolling out the one-step-improved policy from one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOutcome {
    pub state: usize,
    pub episodic_return: f64,
    pub steps: usize,
}

/// Greedy improvement over the undiscounted behavior values, rolled out
/// exhaustively (the dynamics are deterministic) from every witness state.
pub fn one_step_rollouts(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    report: &Lemma1Report,
) -> Result<Vec<RolloutOutcome>, TabularError> {
    let episodic = mdp.with_gamma(1.0);
    let improved = greedy_improve(&evaluate_policy(&episodic, behavior)?);
    let mut out = Vec::with_capacity(report.witness_states.len());
    for &start in &report.witness_states {
        let mut s = start;
        let mut ret = 0.0;
        let mut steps = 0;
        while !mdp.is_terminal(s) {
            if steps > mdp.num_states() {
                return Err(TabularError::StructureViolation(format!("rollout from {start} does not terminate")));
            }
            let a = improved.action(s);
            ret += mdp.reward(s, a);
            s = mdp
                .deterministic_next(s, a)
                .ok_or_else(|| TabularError::StructureViolation("stochastic transition".into()))?;
            steps += 1;
        }
        out.push(RolloutOutcome { state: start, episodic_return: ret, steps });
    }
    Ok(out)
}
