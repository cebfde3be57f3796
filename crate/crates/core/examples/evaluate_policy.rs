//! Evaluation metrics for a network trained on a short chain.

use bvelab::agents::Mode;
use bvelab::envs::make_env;
use bvelab::evaluation::{action_gap, evaluate, normalized_score, random_policy_return, EvalConfig};
use bvelab::experiment::{generate_dataset, run_single, BehaviorKind, ExperimentConfig, GenerateConfig};

fn main() {
    let generate = GenerateConfig { env: "chain:6".into(), episodes: 60, behavior: BehaviorKind::Uniform, noise_epsilon: 0.0, ..GenerateConfig::default() };
    let data = generate_dataset(&generate).unwrap();
    let cfg = ExperimentConfig {
        env: "chain:6".into(),
        mode: Mode::Bve,
        training_steps: 2000,
        batch_size: 32,
        target_update_period: 100,
        learning_rate: 1e-3,
        hidden: vec![16],
        log_every: 0,
        ..ExperimentConfig::default()
    };
    let run = run_single(&data, &cfg, 1, "example").unwrap();

    let eval = EvalConfig { episodes: 20, ..EvalConfig::default() };
    let mut env = make_env("chain:6").unwrap();
    let (summary, rollouts) = evaluate(&run.network, env.as_mut(), &eval).unwrap();
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    let first = &rollouts[0];
    println!("first episode: return {}, predicted vs realised value per step:", first.episodic_return);
    for s in &first.steps {
        println!("  a={} q={:.4} G={:.4}", s.action, s.q, s.g);
    }

    let gap = action_gap(&run.network, data.records().map(|r| &r.state));
    let random = random_policy_return(env.as_mut(), 100, eval.seed).unwrap();
    let reference = data.header().behavior_reference_return.unwrap();
    println!("action gap over dataset states {gap:.4}");
    match normalized_score(summary.episodic_return_median, random, reference) {
        Ok(score) => println!("normalized score {score:.3} (random {random:.3}, behavior {reference:.3})"),
        Err(e) => println!("no normalized score: {e}"),
    }
}
