use std::collections::HashSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{InteractionMatrix, ItemCategoryMap, TargetSpec};
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopularityMode {
    Popular,
    Unpopular,
}

const POPULARITY_GROUPS: usize = 5;

/// Sizes of the popularity quintiles; earlier groups absorb the remainder.
pub(crate) fn quintile_sizes(n_items: usize) -> [usize; POPULARITY_GROUPS] {
    let base = n_items / POPULARITY_GROUPS;
    let rem = n_items % POPULARITY_GROUPS;
    std::array::from_fn(|g| base + usize::from(g < rem))
}

/// Samples `n` target items from the most (or least) popular fifth of items.
pub fn select_target_items(
    m: &InteractionMatrix,
    mode: PopularityMode,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let ranked = m.items_by_popularity();
    let sizes = quintile_sizes(ranked.len());
    let group: &[usize] = match mode {
        PopularityMode::Popular => &ranked[..sizes[0]],
        PopularityMode::Unpopular => &ranked[ranked.len() - sizes[POPULARITY_GROUPS - 1]..],
    };
    if n > group.len() {
        return Err(Error::InsufficientCandidates {
            needed: n,
            available: group.len(),
            context: format!("{mode:?} item group"),
        });
    }
    let mut rng = rng_from(seed);
    Ok(sample(&mut rng, group.len(), n)
        .into_iter()
        .map(|k| group[k])
        .collect())
}

/// Picks users who touched the target item's category at least once but fewer
/// than `cat_threshold` times, and never liked the target item itself.
pub fn select_target_users(
    m: &InteractionMatrix,
    cats: &ItemCategoryMap,
    target_item: usize,
    n: usize,
    cat_threshold: usize,
    seed: u64,
) -> Result<TargetSpec> {
    if target_item >= m.n_items() {
        return Err(Error::Index {
            kind: "item",
            index: target_item,
            bound: m.n_items(),
        });
    }
    if n == 0 {
        return Err(Error::Config("target user count must be at least 1".into()));
    }
    let target_cats: HashSet<&str> = cats
        .categories_of(target_item)
        .iter()
        .map(String::as_str)
        .collect();
    if target_cats.is_empty() {
        return Err(Error::Contract(format!(
            "target item {target_item} has no category"
        )));
    }
    let candidates: Vec<usize> = (0..m.n_users())
        .filter(|&u| {
            if m.likes(u, target_item) {
                return false;
            }
            let hits: usize = m
                .row(u)
                .iter()
                .map(|&i| {
                    cats.categories_of(i)
                        .iter()
                        .filter(|c| target_cats.contains(c.as_str()))
                        .count()
                })
                .sum();
            hits >= 1 && hits < cat_threshold
        })
        .collect();
    if candidates.len() < n {
        return Err(Error::InsufficientCandidates {
            needed: n,
            available: candidates.len(),
            context: "target users".into(),
        });
    }
    let mut rng = rng_from(seed);
    let mut users: Vec<usize> = sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    users.sort_unstable();
    Ok(TargetSpec {
        target_item,
        target_users: users,
        popularity_mode: None,
        selection_seed: seed,
    })
}

/// The attacker's view: `ceil(ratio * n_users)` users, always including the
/// target users. Users keep their original relative order and external ids.
pub fn split_accessible(
    m: &InteractionMatrix,
    ratio: f64,
    target_users: &[usize],
    seed: u64,
) -> Result<InteractionMatrix> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("accessible ratio {ratio} outside (0, 1]")));
    }
    let keep = ((ratio * m.n_users() as f64) - 1e-9).ceil() as usize;
    let targets: HashSet<usize> = target_users.iter().copied().collect();
    if let Some(&bad) = targets.iter().find(|&&u| u >= m.n_users()) {
        return Err(Error::Index {
            kind: "user",
            index: bad,
            bound: m.n_users(),
        });
    }
    if keep < targets.len() {
        return Err(Error::InsufficientCandidates {
            needed: targets.len(),
            available: keep,
            context: "accessible users".into(),
        });
    }
    let others: Vec<usize> = (0..m.n_users()).filter(|u| !targets.contains(u)).collect();
    let mut rng = rng_from(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, others.len(), keep - targets.len())
        .into_iter()
        .map(|k| others[k])
        .chain(targets.iter().copied())
        .collect();
    chosen.sort_unstable();
    Ok(m.select_users(&chosen))
}
