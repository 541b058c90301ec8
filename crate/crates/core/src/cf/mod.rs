//! Collaborative-filtering models used as victim and surrogate: matrix
//! factorization and a layer-averaged LightGCN, trained with BCE or BPR.

pub mod loss;
mod propagate;
mod snapshot;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub use loss::{sample_gradient, score_terms, LossKind, Sample, SampleGradient};
pub use snapshot::{read_model, write_model, MODEL_MAGIC};
pub use train::{objective, objective_gradient, train};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mf,
    LightGcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub negatives_per_positive: usize,
    pub loss: LossKind,
    pub model_kind: ModelKind,
    pub lightgcn_layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 32,
            epochs: 50,
            learning_rate: 0.05,
            l2_reg: 1e-2,
            negatives_per_positive: 4,
            loss: LossKind::Bce,
            model_kind: ModelKind::Mf,
            lightgcn_layers: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::Config("l2_reg must be non-negative".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Trained embedding tables. Scores are dot products of the scoring
/// embeddings, which for LightGCN are the layer-averaged propagation of the
/// trained base embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: TrainConfig,
    n_users: usize,
    n_items: usize,
    base_users: Vec<f64>,
    base_items: Vec<f64>,
    users: Vec<f64>,
    items: Vec<f64>,
    matrix_fingerprint: String,
    epoch_losses: Vec<f64>,
}

impl TrainedModel {
    /// Wraps explicit base embeddings (row-major, `dim = config.embedding_dim`)
    /// and derives the scoring embeddings over `m`.
    pub fn from_embeddings(
        config: TrainConfig,
        m: &InteractionMatrix,
        base_users: Vec<f64>,
        base_items: Vec<f64>,
    ) -> Result<Self> {
        let d = config.embedding_dim;
        if base_users.len() != m.n_users() * d || base_items.len() != m.n_items() * d {
            return Err(Error::Contract("embedding shape does not match matrix".into()));
        }
        let (users, items) = match config.model_kind {
            ModelKind::Mf => (base_users.clone(), base_items.clone()),
            ModelKind::LightGcn => propagate::NormalizedGraph::new(m).layer_mean(
                &base_users,
                &base_items,
                d,
                config.lightgcn_layers,
            ),
        };
        Ok(TrainedModel {
            n_users: m.n_users(),
            n_items: m.n_items(),
            matrix_fingerprint: m.fingerprint(),
            config,
            base_users,
            base_items,
            users,
            items,
            epoch_losses: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.model_kind
    }

    pub fn dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn matrix_fingerprint(&self) -> &str {
        &self.matrix_fingerprint
    }

    /// Mean per-sample loss of every training epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn user_embedding(&self, u: usize) -> &[f64] {
        let d = self.dim();
        &self.users[u * d..(u + 1) * d]
    }

    pub fn item_embedding(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.items[i * d..(i + 1) * d]
    }

    pub fn base_embeddings(&self) -> (&[f64], &[f64]) {
        (&self.base_users, &self.base_items)
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.n_users {
            return Err(Error::Index {
                kind: "user",
                index: u,
                bound: self.n_users,
            });
        }
        Ok(())
    }

    pub fn predict(&self, u: usize, i: usize) -> Result<f64> {
        self.check_user(u)?;
        if i >= self.n_items {
            return Err(Error::Index {
                kind: "item",
                index: i,
                bound: self.n_items,
            });
        }
        Ok(loss::dot(self.user_embedding(u), self.item_embedding(i)))
    }

    /// Scores of user `u` against every item.
    pub fn scores(&self, u: usize) -> Result<Vec<f64>> {
        self.check_user(u)?;
        let eu = self.user_embedding(u);
        Ok((0..self.n_items)
            .map(|i| loss::dot(eu, self.item_embedding(i)))
            .collect())
    }

    /// Top-`k` items by descending score, ties by ascending index. `exclude`
    /// must be sorted (a matrix row qualifies).
    pub fn topk(&self, u: usize, k: usize, exclude: &[usize]) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let scores = self.scores(u)?;
        let mut candidates: Vec<usize> = (0..self.n_items)
            .filter(|i| exclude.binary_search(i).is_err())
            .collect();
        let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, by_rank);
            candidates.truncate(k);
        }
        candidates.sort_by(by_rank);
        Ok(candidates)
    }

    /// 1-based position `item` would take in the full ranking of `u` (same
    /// order as [`topk`](Self::topk)), or `None` when it is excluded.
    pub fn rank_of(&self, u: usize, item: usize, exclude: &[usize]) -> Result<Option<usize>> {
        let scores = self.scores(u)?;
        if item >= self.n_items {
            return Err(Error::Index {
                kind: "item",
                index: item,
                bound: self.n_items,
            });
        }
        if exclude.binary_search(&item).is_ok() {
            return Ok(None);
        }
        let s = scores[item];
        let ahead = (0..self.n_items)
            .filter(|&j| j != item && exclude.binary_search(&j).is_err())
            .filter(|&j| scores[j] > s || (scores[j] == s && j < item))
            .count();
        Ok(Some(ahead + 1))
    }

    /// Hash over config, dimensions and all embedding bits.
    pub fn fingerprint(&self) -> String {
        let mut buf = serde_json::to_vec(&self.config).expect("config serializes");
        buf.extend_from_slice(self.matrix_fingerprint.as_bytes());
        for x in self.base_users.iter().chain(&self.base_items) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        sha256_hex(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn tiny_model(users: Vec<f64>, items: Vec<f64>, n_users: usize, n_items: usize) -> TrainedModel {
        let m = InteractionMatrix::from_rows(n_items, vec![vec![]; n_users]).unwrap();
        let cfg = TrainConfig {
            embedding_dim: users.len() / n_users,
            ..Default::default()
        };
        TrainedModel::from_embeddings(cfg, &m, users, items).unwrap()
    }

    #[test]
    fn predict_is_dot_product() {
        let model = tiny_model(vec![1.0, 0.0], vec![0.5, -2.0], 1, 1);
        assert_eq!(model.predict(0, 0).unwrap(), 0.5);
        assert_eq!(model.predict(0, 0).unwrap().to_bits(), model.predict(0, 0).unwrap().to_bits());
    }

    #[test]
    fn zero_user_scores_zero() {
        let model = tiny_model(vec![0.0, 0.0], vec![0.5, -2.0, 3.0, 1.0], 1, 2);
        assert!(model.scores(0).unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn out_of_range_indices() {
        let model = tiny_model(vec![1.0, 0.0], vec![0.5, -2.0], 1, 1);
        assert!(matches!(model.predict(1, 0), Err(Error::Index { kind: "user", .. })));
        assert!(matches!(model.predict(0, 3), Err(Error::Index { kind: "item", .. })));
    }

    #[test]
    fn topk_ordering_and_exclusion() {
        // item scores for the single user: [1, 3, 3, 0]
        let model = tiny_model(vec![1.0], vec![1.0, 3.0, 3.0, 0.0], 1, 4);
        assert_eq!(model.topk(0, 10, &[]).unwrap(), vec![1, 2, 0, 3]);
        assert_eq!(model.topk(0, 2, &[]).unwrap(), vec![1, 2]);
        assert_eq!(model.topk(0, 2, &[1]).unwrap(), vec![2, 0]);
        assert!(model.topk(0, 3, &[0, 1, 2, 3]).unwrap().is_empty());
        assert_eq!(model.rank_of(0, 2, &[]).unwrap(), Some(2));
        assert_eq!(model.rank_of(0, 0, &[1]).unwrap(), Some(2));
        assert_eq!(model.rank_of(0, 1, &[1]).unwrap(), None);
    }

    #[test]
    fn rank_of_agrees_with_topk() {
        let mut rng = rng_from(3);
        let n_items = 40;
        let users: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        // quantized item embeddings create ties
        let items: Vec<f64> = (0..n_items * 4)
            .map(|_| (rng.random_range(-4.0f64..4.0)).round())
            .collect();
        let model = tiny_model(users, items, 1, n_items);
        let exclude = [3, 7, 19];
        let full = model.topk(0, n_items, &exclude).unwrap();
        for (pos, &item) in full.iter().enumerate() {
            assert_eq!(model.rank_of(0, item, &exclude).unwrap(), Some(pos + 1));
        }
    }

    #[test]
    fn lightgcn_without_layers_scores_like_mf() {
        let m = InteractionMatrix::from_rows(5, vec![vec![0, 1], vec![1, 3], vec![2, 4]]).unwrap();
        let mut rng = rng_from(9);
        let d = 4;
        let users: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let items: Vec<f64> = (0..5 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mf = TrainedModel::from_embeddings(
            TrainConfig { embedding_dim: d, ..Default::default() },
            &m,
            users.clone(),
            items.clone(),
        )
        .unwrap();
        let gcn = TrainedModel::from_embeddings(
            TrainConfig {
                embedding_dim: d,
                model_kind: ModelKind::LightGcn,
                lightgcn_layers: 0,
                ..Default::default()
            },
            &m,
            users,
            items,
        )
        .unwrap();
        for u in 0..3 {
            for i in 0..5 {
                assert_eq!(mf.predict(u, i).unwrap(), gcn.predict(u, i).unwrap());
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { negatives_per_positive: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
