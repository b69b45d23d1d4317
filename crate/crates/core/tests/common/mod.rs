#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xbar_core::dataset::Dataset;
use xbar_core::network::{presets, pretrain, BwnnNetwork, OptimizerKind, TrainConfig};

/// Four overlapping 2-d clusters, one per class.
pub fn blobs(n: usize, spread: f64, seed: u64) -> Dataset {
    let centers = [[-0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [0.5, -0.5]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers.len();
        for v in centers[c] {
            let u: f64 = rng.random_range(-1.0..1.0);
            inputs.push((v + spread * u).clamp(-1.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new([2, 1, 1], centers.len(), inputs, labels).unwrap()
}

pub fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        weight_decay: 0.0,
        epochs,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    }
}

/// A 2-16-16-4 net trained on [`blobs`], frozen.
pub fn trained_net(data: &Dataset) -> BwnnNetwork {
    let mut net = BwnnNetwork::new([2, 1, 1], presets::mlp(2, &[16, 16], 4), 9).unwrap();
    pretrain(&mut net, data, &train_config(20)).unwrap();
    net.freeze();
    net
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
