// SPDX-License-Identifier: Apache-2.0

//! Fixtures for the criterion benchmarks in `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recunlearn::dataset::{binarize, flip_labels, split};
use recunlearn::synthetic::{generate, SyntheticConfig};
use recunlearn::{AttackManifest, Dataset, ModelParams};

pub struct Fixture {
    pub train: Dataset,
    pub manifest: AttackManifest,
    pub params: ModelParams,
}

/// Attacked training split of a synthetic dataset, with small random
/// embeddings standing in for a trained model.
pub fn fixture(num_users: usize, num_items: usize, num_interactions: usize, dim: usize) -> Fixture {
    let config = SyntheticConfig {
        num_users,
        num_items,
        num_interactions,
        ..SyntheticConfig::default()
    };
    let data = binarize(&generate(&config).expect("valid synthetic config"), 4.0).expect("rated");
    let (tr, _, _) = split(&data, [0.6, 0.2, 0.2], 0).expect("valid ratios");
    let (train, manifest) = flip_labels(&tr, 0.02, 0).expect("labeled");
    let params = ModelParams::gaussian(num_users, num_items, dim, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
    Fixture {
        train,
        manifest,
        params,
    }
}
