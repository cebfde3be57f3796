//! Generates a small Catch dataset and trains DDQN, BVE and R-BVE on it.
//!
//! `cargo run --release --example train_catch -- 5000` sets the step count.

use bvelab::agents::Mode;
use bvelab::evaluation::{evaluate, EvalConfig};
use bvelab::experiment::{generate_dataset, run_single, ExperimentConfig, GenerateConfig};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let data = generate_dataset(&GenerateConfig { episodes: 100, ..GenerateConfig::default() }).unwrap();
    println!(
        "dataset: {} episodes, mean return {:.3}, behavior reference {:.3}",
        data.num_episodes(),
        data.mean_episode_return().unwrap(),
        data.header().behavior_reference_return.unwrap()
    );

    for mode in [Mode::Ddqn, Mode::Bve, Mode::RBve] {
        let cfg = ExperimentConfig { mode, training_steps: steps, log_every: steps / 4, eval: EvalConfig { episodes: 50, ..EvalConfig::default() }, ..ExperimentConfig::default() };
        let run = run_single(&data, &cfg, 1, "example").unwrap();
        for row in &run.curve {
            println!("  {mode:<6} step {:>6}  td {:.5}  rank {:.5}  gap {:.4}", row.step, row.td_loss, row.rank_loss, row.action_gap);
        }
        let mut env = bvelab::envs::make_env("catch").unwrap();
        let (summary, _) = evaluate(&run.network, env.as_mut(), &cfg.eval).unwrap();
        println!("{mode:<6} return {:.3}  over-estimation {:.3}", summary.episodic_return_median, summary.over_estimation_error);
    }
}
