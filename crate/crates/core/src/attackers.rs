//! Fake-user profile generation for a given budget allocation.
//!
//! Each assigned target user gets its own RNG stream derived from the attacker
//! seed and the user's position in the allocation, so rows do not depend on
//! generation order.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::{sample, sample_weighted};
use serde::{Deserialize, Serialize};

use crate::allocator::Allocation;
use crate::dataset::{InteractionMatrix, TargetSpec};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, LabRng};

pub const FAKE_ID_PREFIX: &str = "fake::";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerKind {
    Random,
    Average,
    Bandwagon,
    Segment,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackerConfig {
    pub kind: AttackerKind,
    /// Likes per fake user including the target item. `None` uses the rounded
    /// mean row length of the accessible matrix.
    pub profile_size: Option<usize>,
    pub bandwagon_pool: usize,
    pub seed: u64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            kind: AttackerKind::Template,
            profile_size: None,
            bandwagon_pool: 50,
            seed: 0,
        }
    }
}

impl AttackerConfig {
    pub fn resolved_profile_size(&self, accessible: &InteractionMatrix) -> Result<usize> {
        let size = self
            .profile_size
            .unwrap_or_else(|| (accessible.mean_row_len().round() as usize).max(1));
        if size == 0 || size > accessible.n_items() {
            return Err(Error::Config(format!(
                "profile size {size} outside 1..={}",
                accessible.n_items()
            )));
        }
        Ok(size)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        AttackerConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileOrigin {
    Attacker(AttackerKind),
    MaxSimilarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: ProfileOrigin,
    pub template_user: Option<usize>,
    pub assigned_user: Option<usize>,
}

/// Generated fake-user rows. Every row contains the target item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FakeUserBlock {
    pub target_item: usize,
    pub n_items: usize,
    pub profile_size: usize,
    pub rows: Vec<Vec<usize>>,
    pub provenance: Vec<Provenance>,
    pub seed: u64,
}

impl FakeUserBlock {
    pub fn empty(target_item: usize, n_items: usize, profile_size: usize, seed: u64) -> Self {
        FakeUserBlock {
            target_item,
            n_items,
            profile_size,
            rows: Vec::new(),
            provenance: Vec::new(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, row) in self.rows.iter().enumerate() {
            if row.binary_search(&self.target_item).is_err() {
                return Err(Error::Contract(format!("fake row {k} misses the target item")));
            }
            if row.len() > self.profile_size {
                return Err(Error::Contract(format!("fake row {k} exceeds profile size")));
            }
            if row.iter().any(|&i| i >= self.n_items) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("fake row {k} is malformed")));
            }
        }
        if self.provenance.len() != self.rows.len() {
            return Err(Error::Contract("provenance length mismatch".into()));
        }
        Ok(())
    }

    /// `[real; fakes]` with fake ids `fake::<k>`.
    pub fn stack_onto(&self, real: &InteractionMatrix) -> Result<InteractionMatrix> {
        if real.n_items() != self.n_items {
            return Err(Error::Contract(format!(
                "fake block has {} items, matrix has {}",
                self.n_items,
                real.n_items()
            )));
        }
        real.with_appended_users(&self.rows, FAKE_ID_PREFIX)
    }

    pub fn extend(&mut self, other: FakeUserBlock) {
        self.rows.extend(other.rows);
        self.provenance.extend(other.provenance);
    }

    /// Interaction-text export: `fake::<k><sep><item id><sep>5` per like.
    pub fn write_interactions<W: Write>(
        &self,
        m: &InteractionMatrix,
        sep: char,
        mut out: W,
    ) -> Result<()> {
        let mut s = String::new();
        for (k, row) in self.rows.iter().enumerate() {
            for &i in row {
                s.push_str(&format!("{FAKE_ID_PREFIX}{k}{sep}{}{sep}5\n", m.item_ids()[i]));
            }
        }
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io("<fake interactions>", e))
    }
}

/// Distinct filler items drawn uniformly from `pool`.
fn uniform_filler(pool: &[usize], n: usize, rng: &mut LabRng) -> Vec<usize> {
    let n = n.min(pool.len());
    sample(rng, pool.len(), n).into_iter().map(|k| pool[k]).collect()
}

/// Distinct filler items drawn proportionally to `weights[item]`, restricted
/// to positive-weight items of `pool`.
fn weighted_filler(pool: &[usize], weights: &[usize], n: usize, rng: &mut LabRng) -> Vec<usize> {
    let pool: Vec<usize> = pool.iter().copied().filter(|&i| weights[i] > 0).collect();
    let n = n.min(pool.len());
    if n == 0 {
        return Vec::new();
    }
    sample_weighted(rng, pool.len(), |k| weights[pool[k]] as f64, n)
        .expect("positive weights")
        .into_iter()
        .map(|k| pool[k])
        .collect()
}

fn finish_row(target: usize, filler: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut row: Vec<usize> = filler.into_iter().chain(std::iter::once(target)).collect();
    row.sort_unstable();
    row.dedup();
    row
}

/// Builds `sum_u t_u` fake rows according to the attacker strategy.
pub fn generate(
    cfg: &AttackerConfig,
    alloc: &Allocation,
    spec: &TargetSpec,
    accessible: &InteractionMatrix,
) -> Result<FakeUserBlock> {
    if alloc.target_users != spec.target_users || alloc.budgets.len() != alloc.target_users.len() {
        return Err(Error::Contract(
            "allocation does not match the target user group".into(),
        ));
    }
    spec.validate(accessible)?;
    let profile_size = cfg.resolved_profile_size(accessible)?;
    let target = spec.target_item;
    let filler_len = profile_size - 1;
    let popularity = accessible.item_degrees();

    let non_target: Vec<usize> = (0..accessible.n_items()).filter(|&i| i != target).collect();
    let pool: Vec<usize> = match cfg.kind {
        AttackerKind::Random | AttackerKind::Average | AttackerKind::Template => non_target.clone(),
        AttackerKind::Bandwagon => accessible
            .items_by_popularity()
            .into_iter()
            .filter(|&i| i != target)
            .take(cfg.bandwagon_pool)
            .collect(),
        AttackerKind::Segment => spec
            .target_users
            .iter()
            .flat_map(|&u| accessible.row(u).iter().copied())
            .filter(|&i| i != target)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };

    let mut block = FakeUserBlock::empty(target, accessible.n_items(), profile_size, cfg.seed);
    for (pos, (&u, &t)) in spec.target_users.iter().zip(&alloc.budgets).enumerate() {
        if t == 0 {
            continue;
        }
        let mut rng = derive_rng(cfg.seed, "attack", &[pos as u64]);
        let template_row = accessible.row(u);
        let mut cursor = 0;
        for _ in 0..t {
            let row = match cfg.kind {
                AttackerKind::Random | AttackerKind::Bandwagon | AttackerKind::Segment => {
                    finish_row(target, uniform_filler(&pool, filler_len, &mut rng))
                }
                AttackerKind::Average => {
                    finish_row(target, weighted_filler(&pool, &popularity, filler_len, &mut rng))
                }
                AttackerKind::Template => {
                    let copied: Vec<usize> = if template_row.len() <= filler_len {
                        template_row.to_vec()
                    } else {
                        // rotate through the row so repeated fakes cover it
                        let picked = (0..filler_len)
                            .map(|k| template_row[(cursor + k) % template_row.len()])
                            .collect();
                        cursor = (cursor + filler_len) % template_row.len();
                        picked
                    };
                    let missing = filler_len - copied.len();
                    let pad = if missing > 0 {
                        let rest: Vec<usize> = pool
                            .iter()
                            .copied()
                            .filter(|i| template_row.binary_search(i).is_err())
                            .collect();
                        weighted_filler(&rest, &popularity, missing, &mut rng)
                    } else {
                        Vec::new()
                    };
                    finish_row(target, copied.into_iter().chain(pad))
                }
            };
            block.rows.push(row);
            block.provenance.push(Provenance {
                origin: ProfileOrigin::Attacker(cfg.kind),
                template_user: (cfg.kind == AttackerKind::Template).then_some(u),
                assigned_user: Some(u),
            });
        }
    }
    Ok(block)
}

/// `t` copies of the row `{target} + first (profile_size - 1) items of u`,
/// the fake profile sharing the most liked items with `u`.
pub fn max_similarity_profiles(
    u: usize,
    t: usize,
    spec: &TargetSpec,
    accessible: &InteractionMatrix,
    profile_size: usize,
) -> Result<FakeUserBlock> {
    if u >= accessible.n_users() {
        return Err(Error::Index {
            kind: "user",
            index: u,
            bound: accessible.n_users(),
        });
    }
    let size = profile_size.max(1);
    let copied = accessible
        .row(u)
        .iter()
        .copied()
        .filter(|&i| i != spec.target_item)
        .take(size - 1);
    let row = finish_row(spec.target_item, copied);
    let mut block = FakeUserBlock::empty(spec.target_item, accessible.n_items(), size, 0);
    block.rows = vec![row; t];
    block.provenance = vec![
        Provenance {
            origin: ProfileOrigin::MaxSimilarity,
            template_user: Some(u),
            assigned_user: Some(u),
        };
        t
    ];
    Ok(block)
}
