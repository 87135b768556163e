//! Shared fixtures for the benchmark suite.

use aefs_core::predictors::Backbone;
use aefs_core::selection::{ModelPair, PairConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIELDS: usize = 16;
pub const VOCAB: usize = 50;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` rows of category ids, one per field, and their labels.
pub fn batch(seed: u64, n: usize) -> (Vec<Vec<u32>>, Vec<u8>) {
    let mut r = rng(seed);
    let rows = (0..n)
        .map(|_| (0..FIELDS).map(|_| r.random_range(0..VOCAB as u32)).collect())
        .collect();
    let labels = (0..n).map(|_| u8::from(r.random_bool(0.3))).collect();
    (rows, labels)
}

pub fn as_refs(rows: &[Vec<u32>]) -> Vec<&[u32]> {
    rows.iter().map(Vec::as_slice).collect()
}

pub fn scores(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random::<f64>()).collect()
}

/// Model pair at the default sizes: d1 = 32, d2 = 4, half the fields kept.
pub fn pair(backbone: Backbone) -> ModelPair {
    ModelPair::new(
        &mut rng(7),
        PairConfig {
            vocab_sizes: vec![VOCAB; FIELDS],
            d1: 32,
            d2: 4,
            k: FIELDS / 2,
            main_backbone: backbone,
            aux_backbone: backbone,
            hidden_dims: vec![16, 16],
            n_cross_layers: 2,
            topk_reweight: true,
        },
    )
    .expect("valid pair config")
}
