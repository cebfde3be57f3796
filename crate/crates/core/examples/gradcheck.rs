//! Backpropagation against central differences on random MLPs.

use bvelab::neuralnet::{random_gradcheck, save_checkpoint, load_checkpoint, checkpoint_bytes, QNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        sizes.extend((0..depth).map(|_| rng.random_range(1..=8)));
        sizes.push(rng.random_range(1..=4));
        let report = random_gradcheck(&sizes, &mut rng);
        worst = worst.max(report.max_relative_error);
        if i < 5 {
            println!("sizes {sizes:?}: {} params, max relative error {:.2e}", report.num_params, report.max_relative_error);
        }
    }
    println!("worst over 100 networks: {worst:.2e}");

    let net = QNetwork::mlp(50, 3, &[56, 56], &mut rng);
    let path = std::env::temp_dir().join("bvelab_example.bveq");
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    println!("checkpoint round trip byte-identical: {}", checkpoint_bytes(&net) == checkpoint_bytes(&back));
    std::fs::remove_file(path).ok();
}
