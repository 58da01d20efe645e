//! Shared fixtures for the benchmark targets.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use evimil_core::data::{generate_bags, synth2d_pool, BagDataset};
use evimil_core::milmodel::{Architecture, MilParams};
use evimil_core::numcore::Array;

pub fn small_model(input_dim: usize, seed: u64) -> MilParams {
    let arch = Architecture {
        input_dim,
        encoder: vec![64, 32],
        attention_dim: 16,
        residual_hidden: 16,
        num_classes: 2,
    };
    MilParams::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_bag(k: usize, dim: usize, seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_vec(&[k, dim], (0..k * dim).map(|_| rng.random_range(-2.0..2.0)).collect())
}

pub fn tiny_dataset(n_bags: usize, seed: u64) -> BagDataset {
    let pool = synth2d_pool(seed);
    generate_bags(&pool, n_bags, 10.0, 2.0, seed + 1).unwrap()
}
