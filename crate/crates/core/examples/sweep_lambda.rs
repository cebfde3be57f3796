//! A miniature sweep over the ranking weight, written under a temporary
//! output root.

use bvelab::agents::Mode;
use bvelab::evaluation::EvalConfig;
use bvelab::experiment::{sweep, BehaviorKind, ExperimentConfig, GenerateConfig, SweepAxis, SweepConfig};

fn main() {
    let template = ExperimentConfig {
        env: "chain:5".into(),
        generate: GenerateConfig { env: "chain:5".into(), episodes: 40, behavior: BehaviorKind::Uniform, noise_epsilon: 0.0, ..GenerateConfig::default() },
        training_steps: 500,
        batch_size: 32,
        target_update_period: 100,
        learning_rate: 1e-3,
        hidden: vec![16],
        seeds: vec![1, 2, 3],
        log_every: 0,
        eval: EvalConfig { episodes: 10, ..EvalConfig::default() },
        save_checkpoints: false,
        ..ExperimentConfig::default()
    };
    let cfg = SweepConfig { template, axis: SweepAxis::Lambda, values: vec![0.0, 0.005, 0.1], modes: vec![Mode::RBve, Mode::RDqn], workers: 0 };
    let root = std::env::temp_dir().join("bvelab_sweep_example");
    let (dir, rows, summary) = sweep(&cfg, &root).unwrap();
    println!("{} runs written to {}", rows.len(), dir.display());
    println!("{:<6} {:>7} {:>9} {:>15} {:>10}", "mode", "lambda", "return", "over-estimation", "gap");
    for s in &summary {
        println!("{:<6} {:>7} {:>9.3} {:>15.4} {:>10.4}", s.mode, s.value, s.return_median, s.over_estimation_median, s.action_gap_median);
    }
}
