use proptest::prelude::*;

use bvelab::agents::{ranking_loss_terms, success_weight, LossConfig};
use bvelab::datastore::{self, log_episodes, Dataset, DatasetError, UniformPolicy};
use bvelab::envs::{ChainMdp, Catch, TabularModel};
use bvelab::tabular::{evaluate_policy, improvement_summary};

fn chain_data(n: usize, episodes: usize, gamma: f64, seed: u64) -> Dataset {
    let mut env = ChainMdp::new(n);
    log_episodes(&mut env, &mut UniformPolicy::new(2, seed), episodes, gamma, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn return_to_go_follows_backward_recursion(n in 2usize..8, episodes in 1usize..12, gamma in 0.0f64..=1.0, seed in any::<u64>()) {
        let data = chain_data(n, episodes, gamma, seed);
        for ep in data.episodes() {
            let last = ep.last().unwrap();
            prop_assert_eq!(last.return_to_go, last.reward);
            for w in ep.windows(2) {
                let expect = w[0].reward + gamma * w[1].return_to_go;
                prop_assert!((w[0].return_to_go - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
            let total: f64 = ep.iter().map(|r| r.reward).sum();
            prop_assert!(ep.iter().all(|r| r.episode_return == total));
        }
    }

    #[test]
    fn serialization_round_trips(episodes in 1usize..10, seed in any::<u64>()) {
        let mut env = Catch::new();
        let data = log_episodes(&mut env, &mut UniformPolicy::new(3, seed), episodes, 0.99, seed).unwrap();
        let bytes = datastore::to_bytes(&data);
        let back = datastore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(datastore::to_bytes(&back), bytes);
        prop_assert_eq!(back.num_transitions(), data.num_transitions());
    }

    #[test]
    fn any_flipped_byte_is_rejected(seed in any::<u64>(), at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let data = chain_data(4, 3, 0.9, seed);
        let mut bytes = datastore::to_bytes(&data);
        let i = at.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(datastore::from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncated_files_are_rejected(seed in any::<u64>(), keep in 0.0f64..1.0) {
        let bytes = datastore::to_bytes(&chain_data(4, 3, 0.9, seed));
        let cut = (keep * bytes.len() as f64) as usize;
        prop_assert!(datastore::from_bytes(&bytes[..cut]).is_err());
    }

    #[test]
    fn subsample_keeps_whole_episodes(episodes in 1usize..40, fraction in 0.001f64..=1.0, seed in any::<u64>()) {
        let data = chain_data(5, episodes, 0.99, 7);
        let sub = data.subsample(fraction, seed).unwrap();
        prop_assert_eq!(sub.num_episodes(), ((fraction * episodes as f64 - 1e-9).ceil() as usize).max(1));
        for ep in sub.episodes() {
            prop_assert!(data.episodes().iter().any(|orig| orig == ep));
        }
        prop_assert!(sub.validate().is_ok());
    }

    #[test]
    fn ranking_penalty_is_zero_only_beyond_the_margin(q in prop::collection::vec(-5.0f64..5.0, 2..6), pick in any::<prop::sample::Index>(), nu in 0.0f64..0.5) {
        let a = pick.index(q.len());
        let loss = ranking_loss_terms(&q, a, nu);
        prop_assert!(loss >= 0.0);
        let best_other = q.iter().enumerate().filter(|&(i, _)| i != a).map(|(_, &x)| x).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(loss == 0.0, q[a] >= best_other + nu);
    }

    #[test]
    fn success_weight_is_clipped_and_monotone(g in -50.0f64..50.0, mean in -50.0f64..50.0, dg in 0.0f64..5.0) {
        let cfg = LossConfig::default();
        let w = success_weight(g, mean, &cfg);
        prop_assert!(w >= 0.0 && w <= cfg.weight_clip);
        prop_assert!(success_weight(g + dg, mean, &cfg) >= w);
    }

    #[test]
    fn one_greedy_step_solves_every_chain(n in 2usize..25, gamma in 0.5f64..0.999) {
        let mdp = ChainMdp::new(n).tabular_model(gamma);
        let (_, _, improved, optimal) = improvement_summary(&mdp).unwrap();
        let one_step = evaluate_policy(&mdp, &improved).unwrap();
        for s in 0..n {
            prop_assert!((one_step.v[s] - optimal.v[s]).abs() <= 1e-9);
        }
    }
}

#[test]
fn invalid_fractions_are_errors() {
    let data = chain_data(3, 4, 0.9, 1);
    for f in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(data.subsample(f, 0), Err(DatasetError::InvalidFraction(_))));
    }
}
