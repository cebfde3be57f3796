//! Uniform-random rollouts in every builtin environment.

use bvelab::envs::{make_env, ActionNoise, Catch, Environment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_returns(env: &mut dyn Environment, episodes: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = env.spec().num_actions;
    let (mut total, mut steps) = (0.0, 0usize);
    for ep in 0..episodes {
        env.reset(seed + ep as u64);
        loop {
            let r = env.step(rng.random_range(0..n)).expect("valid action");
            total += r.reward;
            steps += 1;
            if r.terminal || r.truncated {
                break;
            }
        }
    }
    (total / episodes as f64, steps as f64 / episodes as f64)
}

fn main() {
    for name in ["catch", "cartpole", "mountain_car", "chain:10", "grid", "divergence"] {
        let mut env = make_env(name).unwrap();
        let spec = env.spec().clone();
        let (ret, len) = random_returns(env.as_mut(), 50, 7);
        println!("{name:<14} obs {:>3}  actions {}  mean return {ret:>8.3}  mean length {len:>6.1}", spec.observation_dim, spec.num_actions);
    }

    let mut noisy = ActionNoise::new(Catch::new(), 0.25, 3).unwrap();
    let (ret, _) = random_returns(&mut noisy, 50, 7);
    println!("catch with 25% action noise: mean return {ret:.3}, {} of {} actions replaced", noisy.substitutions(), noisy.steps());
}
