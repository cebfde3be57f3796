//! The two-state counterexample: max-based TD diverges, the behavior-value
//! target stays bounded, and the network loop tracks the closed form.

use bvelab::agents::Mode;
use bvelab::divergence::{
    cross_check_with_neuralnet, predicted_crossing, run_generic_adam, run_generic_gd, run_gradient_descent, GdOutcome, ToyConfig,
    DIVERGENCE_THRESHOLD,
};

fn main() {
    let cfg = ToyConfig::default();
    println!("gamma {} beta {} alpha {}: diverges in theory = {}", cfg.gamma, cfg.beta_feature, cfg.learning_rate, cfg.diverges_in_theory());

    let closed = run_gradient_descent(&cfg, 1000, DIVERGENCE_THRESHOLD);
    println!("closed form: {:?}, predicted crossing {:?}", closed.outcome, predicted_crossing(&cfg, DIVERGENCE_THRESHOLD));
    for (step, p) in closed.params.iter().enumerate().step_by(25) {
        println!("  step {step:>4}  w {:>14.4}  u1 {:.6}", p.w, p.u1);
    }

    let check = cross_check_with_neuralnet(&cfg, 50).unwrap();
    println!("network vs closed form over {} steps: max relative gap {:.2e}", check.steps_compared, check.max_relative_discrepancy);

    let dqn = run_generic_gd(&cfg, Mode::Dqn, 1000).unwrap();
    let bve = run_generic_gd(&cfg, Mode::Bve, 100_000).unwrap();
    let last = bve.trace.last().unwrap();
    println!("network DQN diverged at {:?}", dqn.diverged_at);
    println!("network BVE after 100000 steps: diverged {:?}, w {:.4}, u1 {:.12}", bve.diverged_at, last.w, last.u1);

    let adam = run_generic_adam(&cfg, Mode::Dqn, 0.1, 10_000).unwrap();
    println!("DQN under Adam: w after 10000 steps {:.1}", adam.trace.last().unwrap().w);

    let small = ToyConfig { gamma: 0.2, ..cfg };
    let bounded = matches!(run_gradient_descent(&small, 10_000, DIVERGENCE_THRESHOLD).outcome, GdOutcome::Bounded);
    println!("gamma*beta = {:.1}: bounded = {bounded}", small.gamma * small.beta_feature);
}
