//! Logs Catch episodes, writes them to a `.bved` file and reads them back.

use bvelab::datastore::{self, log_episodes, UniformPolicy};
use bvelab::envs::{ActionNoise, Catch};

fn main() {
    let mut env = ActionNoise::new(Catch::new(), 0.25, 11).unwrap();
    let mut policy = UniformPolicy::new(3, 5);
    let data = log_episodes(&mut env, &mut policy, 40, 0.99, 1).unwrap();

    let path = std::env::temp_dir().join("bvelab_example.bved");
    datastore::save(&data, &path).unwrap();
    let back = datastore::load(&path).unwrap();
    assert_eq!(datastore::to_bytes(&data), datastore::to_bytes(&back));
    println!("{}: {} bytes, {} episodes, {} transitions", path.display(), std::fs::metadata(&path).unwrap().len(), back.num_episodes(), back.num_transitions());

    let first = &back.episodes()[0];
    println!("first episode (reward, return-to-go):");
    for r in first {
        println!("  t={:<2} a={} r={:>4} G={:.4}", r.t, r.action, r.reward, r.return_to_go);
    }

    let (below, above) = back.split_by_episodic_return().unwrap();
    println!("split at the mean return: {} below, {} at or above", below.num_episodes(), above.num_episodes());
    let tenth = back.subsample(0.1, 0).unwrap();
    println!("10% subsample: {} episodes, fraction {}", tenth.num_episodes(), tenth.header().subsample_fraction);
    std::fs::remove_file(path).ok();
}
