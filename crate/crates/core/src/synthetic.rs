// SPDX-License-Identifier: Apache-2.0

//! Planted-preference rating data from a low-rank latent model.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{rng_for, Dataset, InteractionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub rank: usize,
    /// Share of the affinity variance carried by one latent direction that
    /// every user weighs equally, which acts as item popularity.
    pub popularity_share: f64,
    /// Standard deviation of the Gaussian noise added to the unit-variance
    /// latent affinity.
    pub noise_std: f64,
    /// Upper cumulative quantiles of ratings 1..=4; the rest are rated 5.
    pub rating_quantiles: [f64; 4],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 2000,
            num_items: 2000,
            num_interactions: 50_000,
            rank: 8,
            popularity_share: 0.5,
            noise_std: 0.5,
            rating_quantiles: [0.15, 0.3, 0.45, 0.6],
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.rank == 0 {
            return Err(Error::InvalidConfig("synthetic sizes must be positive".into()));
        }
        if self.num_interactions > self.num_users * self.num_items / 2 {
            return Err(Error::InvalidConfig(format!(
                "{} interactions is too dense for {}x{}",
                self.num_interactions, self.num_users, self.num_items
            )));
        }
        if !(0.0..=1.0).contains(&self.popularity_share) {
            return Err(Error::InvalidConfig(format!(
                "popularity_share {} outside [0, 1]",
                self.popularity_share
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_std {} invalid", self.noise_std)));
        }
        let q = &self.rating_quantiles;
        if q.windows(2).any(|w| w[0] > w[1]) || q[0] < 0.0 || q[3] > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "rating quantiles {q:?} not increasing in [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Samples distinct user-item pairs uniformly and rates each from the noisy
/// latent affinity, cut into five levels at the configured quantiles.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = rng_for(config.seed, 0);
    let r = config.rank;
    let unit = Normal::new(0.0, 1.0).expect("positive std");
    let mut users: Vec<f64> = (0..config.num_users * r).map(|_| unit.sample(&mut rng)).collect();
    let items: Vec<f64> = (0..config.num_items * r).map(|_| unit.sample(&mut rng)).collect();
    // coordinate 0 is the shared direction; the remaining r - 1 are personal
    let personal = if r > 1 {
        ((1.0 - config.popularity_share) / (r - 1) as f64).sqrt()
    } else {
        0.0
    };
    for p in users.chunks_mut(r) {
        p[0] = config.popularity_share.sqrt();
        p[1..].iter_mut().for_each(|x| *x *= personal);
    }
    let mut rng = rng_for(config.seed, 1);
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("positive std");
    let mut seen = HashSet::with_capacity(config.num_interactions);
    let mut pairs = Vec::with_capacity(config.num_interactions);
    let mut affinity = Vec::with_capacity(config.num_interactions);
    while pairs.len() < config.num_interactions {
        let u = rng.gen_range(0..config.num_users);
        let i = rng.gen_range(0..config.num_items);
        if !seen.insert((u, i)) {
            continue;
        }
        let p = &users[u * r..(u + 1) * r];
        let q = &items[i * r..(i + 1) * r];
        let clean: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
        let eps = if config.noise_std > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        pairs.push((u as u32, i as u32));
        affinity.push(clean + eps);
    }

    let mut sorted = affinity.clone();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = config
        .rating_quantiles
        .iter()
        .map(|&q| {
            let k = ((q * sorted.len() as f64) as usize).min(sorted.len().saturating_sub(1));
            sorted[k]
        })
        .collect();
    let records = pairs
        .into_iter()
        .zip(affinity)
        .map(|((user, item), a)| {
            let rating = 1 + cuts.iter().filter(|&&c| a >= c).count();
            InteractionRecord {
                user,
                item,
                label: None,
                raw_rating: Some(rating as f64),
            }
        })
        .collect();
    Dataset::from_records(config.num_users, config.num_items, records)
}
