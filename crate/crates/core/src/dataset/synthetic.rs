//! Seeded synthetic interaction data with power-law item popularity and
//! planted user/category affinities.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{InteractionMatrix, ItemCategoryMap};
use crate::error::{Error, Result};
use crate::seed::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Mean likes per user.
    pub mean_degree: f64,
    pub min_degree: usize,
    /// Item weight is `(popularity_rank + 1)^-exponent`.
    pub popularity_exponent: f64,
    /// Probability that a like falls in the user's home category.
    pub affinity: f64,
    /// Shape of the Pareto tail of user activity; smaller is heavier.
    pub activity_shape: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 2000,
            n_items: 1500,
            n_categories: 8,
            mean_degree: 7.5,
            min_degree: 3,
            popularity_exponent: 0.9,
            affinity: 0.7,
            activity_shape: 2.0,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub matrix: InteractionMatrix,
    pub categories: ItemCategoryMap,
    /// Planted home category per user.
    pub home_category: Vec<usize>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_categories == 0 {
        return Err(Error::Config("synthetic dimensions must be positive".into()));
    }
    if cfg.n_categories > cfg.n_items {
        return Err(Error::Config("more categories than items".into()));
    }
    if !(0.0..=1.0).contains(&cfg.affinity)
        || cfg.mean_degree < cfg.min_degree as f64
        || cfg.activity_shape <= 1.0
    {
        return Err(Error::Config("invalid affinity, degree or activity settings".into()));
    }

    let mut rng = derive_rng(cfg.seed, "synthetic-items", &[]);
    let mut rank: Vec<usize> = (0..cfg.n_items).collect();
    rank.shuffle(&mut rng);
    let weight: Vec<f64> = rank
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.popularity_exponent))
        .collect();
    // every category gets at least one item
    let item_category: Vec<usize> = (0..cfg.n_items)
        .map(|i| {
            if i < cfg.n_categories {
                i
            } else {
                rng.random_range(0..cfg.n_categories)
            }
        })
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_categories];
    for (i, &c) in item_category.iter().enumerate() {
        members[c].push(i);
    }
    let per_category: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|items| WeightedIndex::new(items.iter().map(|&i| weight[i])).expect("positive weights"))
        .collect();
    let global = WeightedIndex::new(&weight).expect("positive weights");

    let mut rng = derive_rng(cfg.seed, "synthetic-users", &[]);
    let extra_mean = cfg.mean_degree - cfg.min_degree as f64;
    let max_degree = (cfg.n_items / 4).max(cfg.min_degree);
    let mut rows = Vec::with_capacity(cfg.n_users);
    let mut home_category = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let home = rng.random_range(0..cfg.n_categories);
        // Lomax tail on top of the minimum degree; +0.5 offsets the floor
        let extra = if extra_mean > 0.0 {
            let scale = (extra_mean + 0.5) * (cfg.activity_shape - 1.0);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (scale * (u.powf(-1.0 / cfg.activity_shape) - 1.0)).floor() as usize
        } else {
            0
        };
        let degree = (cfg.min_degree + extra).min(max_degree);
        let mut row: Vec<usize> = Vec::with_capacity(degree);
        let mut attempts = 0;
        while row.len() < degree && attempts < degree * 50 {
            attempts += 1;
            let item = if rng.random_bool(cfg.affinity) {
                members[home][per_category[home].sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            if !row.contains(&item) {
                row.push(item);
            }
        }
        rows.push(row);
        home_category.push(home);
    }

    let matrix = InteractionMatrix::from_rows(cfg.n_items, rows)?;
    let mut categories = ItemCategoryMap::new(cfg.n_items);
    for (i, &c) in item_category.iter().enumerate() {
        categories.assign(i, format!("c{c}"))?;
    }
    Ok(SyntheticData {
        matrix,
        categories,
        home_category,
    })
}
