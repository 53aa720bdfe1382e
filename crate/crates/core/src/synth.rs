//! Long-tailed synthetic interaction data.
//!
//! Item `i` (0-based) has Zipf weight `1 / (i + 1)^exponent`, so index order
//! is popularity order. Each user belongs to one of `clusters` taste groups
//! (item `i` is in group `i % clusters`). With probability `taste` a draw is
//! restricted to the user's group, still Zipf-weighted; otherwise it comes
//! from the global Zipf distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Zipf};

use crate::dataset::{IdMap, InteractionDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub exponent: f64,
    /// Median interactions per user; counts are log-normal around it.
    pub median_interactions: f64,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub clusters: usize,
    pub taste: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 200,
            exponent: 1.2,
            median_interactions: 20.0,
            min_interactions: 5,
            max_interactions: 80,
            clusters: 8,
            taste: 0.3,
            seed: 0,
        }
    }
}

pub fn generate(config: &SynthConfig) -> Result<InteractionDataset> {
    let c = config;
    if c.num_users == 0 || c.num_items == 0 || c.clusters == 0 {
        return Err(Error::Config("synthetic data needs users, items and clusters".into()));
    }
    if !(0.0..=1.0).contains(&c.taste) || c.min_interactions > c.max_interactions {
        return Err(Error::Config("taste must be in [0,1] and min <= max interactions".into()));
    }
    let zipf = Zipf::new(c.num_items as f64, c.exponent)
        .map_err(|e| Error::Config(format!("bad Zipf parameters: {e}")))?;
    let activity = LogNormal::new(c.median_interactions.max(1.0).ln(), 0.6)
        .map_err(|e| Error::Config(format!("bad activity parameters: {e}")))?;
    let cap = c.max_interactions.min(c.num_items);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut pairs = Vec::new();
    let mut taken = vec![false; c.num_items];
    for u in 0..c.num_users {
        let cluster = rng.random_range(0..c.clusters);
        let own: Vec<usize> = (cluster..c.num_items).step_by(c.clusters).collect();
        let want = (activity.sample(&mut rng).round() as usize).clamp(c.min_interactions, c.max_interactions).min(cap);
        let mut got = Vec::with_capacity(want);
        let mut attempts = 0;
        while got.len() < want && attempts < 50 * want {
            attempts += 1;
            let mut item = zipf.sample(&mut rng) as usize - 1;
            if !own.is_empty() && rng.random_bool(c.taste) {
                let mut tries = 0;
                while item % c.clusters != cluster && tries < 64 {
                    item = zipf.sample(&mut rng) as usize - 1;
                    tries += 1;
                }
                if item % c.clusters != cluster {
                    item = own[rng.random_range(0..own.len())];
                }
            }
            if !taken[item] {
                taken[item] = true;
                got.push(item);
            }
        }
        for &i in &got {
            taken[i] = false;
            pairs.push((u, i));
        }
    }
    let users = IdMap::from_ids((0..c.num_users).map(|u| format!("u{u}")).collect())?;
    let items = IdMap::from_ids((0..c.num_items).map(|i| format!("i{i}")).collect())?;
    InteractionDataset::from_indexed(users, items, pairs)
}
