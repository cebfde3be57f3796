use super::mdp::{argmax, TabularMdp, TabularPolicy, ValueTables};
use super::TabularError;

const PIVOT_EPS: f64 = 1e-12;

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`.
pub fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, TabularError> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix shape");
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot_row * n + col].abs() < PIVOT_EPS {
            return Err(TabularError::SingularSystem);
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

fn q_from_v(mdp: &TabularMdp, v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| {
                    if mdp.is_terminal(s) {
                        return 0.0;
                    }
                    let next: f64 = mdp.next_distribution(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
                    mdp.reward(s, a) + mdp.gamma() * next
                })
                .collect()
        })
        .collect()
}

/// Exact policy evaluation: solves `(I - gamma P_pi) V = R_pi` with terminal
/// values pinned to zero, which also makes `gamma = 1` episodic problems
/// well posed whenever the policy terminates with probability one.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<ValueTables, TabularError> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if policy.num_states() != ns || (0..ns).any(|s| policy.probs(s).len() != na) {
        return Err(TabularError::ShapeMismatch);
    }
    let mut a = vec![0.0; ns * ns];
    let mut b = vec![0.0; ns];
    for s in 0..ns {
        a[s * ns + s] = 1.0;
        if mdp.is_terminal(s) {
            continue;
        }
        for (act, &pa) in policy.probs(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            b[s] += pa * mdp.reward(s, act);
            for (next, &p) in mdp.next_distribution(s, act).iter().enumerate() {
                if p != 0.0 && !mdp.is_terminal(next) {
                    a[s * ns + next] -= mdp.gamma() * pa * p;
                }
            }
        }
    }
    let v = solve_linear(a, b)?;
    let q = q_from_v(mdp, &v);
    Ok(ValueTables { v, q })
}

/// Deterministic greedy policy over `Q`, lowest action index on ties.
pub fn greedy_improve(values: &ValueTables) -> TabularPolicy {
    let num_actions = values.q.first().map_or(0, Vec::len);
    let actions: Vec<usize> = values.q.iter().map(|row| argmax(row)).collect();
    TabularPolicy::deterministic(&actions, num_actions)
}

/// Optimal values by value iteration; stops once the sup-norm change of `V`
/// falls below `tolerance`.
pub fn value_iteration(mdp: &TabularMdp, tolerance: f64, max_iters: usize) -> Result<ValueTables, TabularError> {
    assert!(tolerance > 0.0);
    let mut v = vec![0.0; mdp.num_states()];
    for _ in 0..max_iters {
        let q = q_from_v(mdp, &v);
        let next: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(s, row)| if mdp.is_terminal(s) { 0.0 } else { row[argmax(row)] })
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual < tolerance {
            let q = q_from_v(mdp, &v);
            return Ok(ValueTables { v, q });
        }
    }
    Err(TabularError::NonConvergence { max_iters })
}

/// Actions within `tolerance` of the best value in state `s`.
pub fn optimal_actions(values: &ValueTables, s: usize, tolerance: f64) -> Vec<usize> {
    let row = &values.q[s];
    let best = row[argmax(row)];
    (0..row.len()).filter(|&a| row[a] >= best - tolerance).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_chain(gamma: f64) -> TabularMdp {
        // state 0 -> (LEFT stays, RIGHT to 1); state 1 -> terminal 2 paying 1.
        TabularMdp::builder(3, 2, gamma)
            .transition(0, 0, 0, 1.0)
            .transition(0, 1, 1, 1.0)
            .transition(1, 0, 2, 1.0)
            .reward(1, 0, 1.0)
            .transition(1, 1, 2, 1.0)
            .reward(1, 1, 1.0)
            .terminal(2)
            .build()
            .unwrap()
    }

    #[test]
    fn linear_solve_matches_known_system() {
        let x = solve_linear(vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert_eq!(solve_linear(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]), Err(TabularError::SingularSystem));
    }

    #[test]
    fn three_state_chain_matches_hand_solve() {
        // V2 = 1, V1 = 0.45 (V0 + V2), V0 = 0.45 (V0 + V1):
        // V1 = 0.45 * 11 / 6.95, V0 = 9/11 V1.
        let mdp = crate::envs::ChainMdp::new(3);
        let mdp = crate::envs::TabularModel::tabular_model(&mdp, 0.9);
        let v = evaluate_policy(&mdp, &TabularPolicy::uniform(4, 2)).unwrap().v;
        let v1 = 0.45 * 11.0 / 6.95;
        let expected = [9.0 / 11.0 * v1, v1, 1.0, 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn zero_reward_mdp_has_zero_values() {
        let mdp = TabularMdp::builder(2, 2, 0.95)
            .transition(0, 0, 0, 0.5)
            .transition(0, 0, 1, 0.5)
            .transition(0, 1, 0, 1.0)
            .transition(1, 0, 1, 1.0)
            .transition(1, 1, 0, 1.0)
            .build()
            .unwrap();
        let vt = evaluate_policy(&mdp, &TabularPolicy::uniform(2, 2)).unwrap();
        assert!(vt.v.iter().all(|&x| x == 0.0));
        let opt = value_iteration(&mdp, 1e-12, 1000).unwrap();
        assert!(opt.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn value_iteration_two_state_closed_form() {
        // V*(1) = 1, V*(0) = gamma.
        for gamma in [0.5, 0.9, 0.99] {
            let vt = value_iteration(&two_state_chain(gamma), 1e-13, 10_000).unwrap();
            assert!((vt.v[1] - 1.0).abs() < 1e-12);
            assert!((vt.v[0] - gamma).abs() < 1e-12);
        }
    }

    #[test]
    fn undiscounted_recurrent_policy_is_singular() {
        let mdp = two_state_chain(1.0);
        let stay_left = TabularPolicy::deterministic(&[0, 0, 0], 2);
        assert_eq!(evaluate_policy(&mdp, &stay_left), Err(TabularError::SingularSystem));
        let go_right = TabularPolicy::deterministic(&[1, 0, 0], 2);
        let v = evaluate_policy(&mdp, &go_right).unwrap().v;
        assert_eq!(v, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn greedy_improvement_examples() {
        let vt = ValueTables { v: vec![0.0, 0.0], q: vec![vec![0.2, 0.7], vec![0.5, 0.5]] };
        let pi = greedy_improve(&vt);
        assert_eq!((pi.action(0), pi.action(1)), (1, 0));
    }

    #[test]
    fn v_is_policy_average_of_q() {
        let mdp = two_state_chain(0.9);
        let pi = TabularPolicy::from_probs(vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let vt = evaluate_policy(&mdp, &pi).unwrap();
        for s in 0..3 {
            let avg: f64 = pi.probs(s).iter().zip(&vt.q[s]).map(|(p, q)| p * q).sum();
            assert!((avg - vt.v[s]).abs() < 1e-9);
        }
    }
}
