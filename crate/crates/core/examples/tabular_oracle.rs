//! Exact values of the uniform policy, its one-step greedy improvement and
//! the optimum, on the shipped grid world and on a chain.

use bvelab::envs::{ChainMdp, GridWorld, TabularModel};
use bvelab::tabular::{argmax, check_lemma1_premise, improvement_summary, TabularPolicy};

fn main() {
    let grid = GridWorld::shipped().tabular_model(0.99);
    let (s, _, improved, _) = improvement_summary(&grid).unwrap();
    println!("grid start values: uniform {:.3}, one step {:.3}, optimal {:.3}", s.uniform, s.one_step, s.optimal);
    println!("one greedy step recovers {:.1}% of the gap", 100.0 * s.recovered_fraction());
    let moves: Vec<usize> = (0..grid.num_states()).map(|st| argmax(improved.probs(st))).collect();
    println!("improved actions by state: {moves:?}");

    let chain = ChainMdp::new(10).tabular_model(0.9);
    let (c, uniform, _, _) = improvement_summary(&chain).unwrap();
    let v: Vec<String> = uniform.v.iter().map(|x| format!("{x:.3}")).collect();
    println!("\nchain:10 uniform values [{}]", v.join(", "));
    println!("chain:10 start: uniform {:.4}, one step {:.4}, optimal {:.4}", c.uniform, c.one_step, c.optimal);

    let behavior = TabularPolicy::uniform(chain.num_states(), chain.num_actions());
    match check_lemma1_premise(&chain, &behavior, 0.0, 1.0) {
        Ok(r) => println!("one-step optimality premise on the chain: holds={} finite_horizon={}", r.holds, r.finite_horizon),
        Err(e) => println!("premise not applicable: {e}"),
    }
}
