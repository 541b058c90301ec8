use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::{sample_gradient, LossKind, Sample};
use super::propagate::NormalizedGraph;
use super::{ModelKind, TrainConfig, TrainedModel};
use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};
use crate::seed::{derive_rng, LabRng};

/// Samples per propagated LightGCN update.
const GCN_BATCH: usize = 256;

fn row(emb: &[f64], k: usize, d: usize) -> &[f64] {
    &emb[k * d..(k + 1) * d]
}

fn row_mut(emb: &mut [f64], k: usize, d: usize) -> &mut [f64] {
    &mut emb[k * d..(k + 1) * d]
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Uniform negatives among the items `u` has not liked.
fn sample_negatives(m: &InteractionMatrix, u: usize, count: usize, rng: &mut LabRng) -> Vec<usize> {
    let liked = m.row(u);
    if liked.len() >= m.n_items() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.random_range(0..m.n_items());
        if liked.binary_search(&j).is_err() {
            out.push(j);
        }
    }
    out
}

/// Total objective of a fixed sample set for dot-product scores over the
/// given embedding tables (row-major, width `dim`).
pub fn objective(
    kind: LossKind,
    l2: f64,
    dim: usize,
    users: &[f64],
    items: &[f64],
    samples: &[Sample],
) -> f64 {
    samples
        .iter()
        .map(|s| {
            let negs: Vec<&[f64]> = s.negs.iter().map(|&j| row(items, j, dim)).collect();
            sample_gradient(kind, l2, row(users, s.user, dim), row(items, s.pos, dim), &negs).loss
        })
        .sum()
}

/// Analytic gradient of [`objective`] with respect to both tables.
pub fn objective_gradient(
    kind: LossKind,
    l2: f64,
    dim: usize,
    users: &[f64],
    items: &[f64],
    samples: &[Sample],
) -> (Vec<f64>, Vec<f64>) {
    let mut gu = vec![0.0; users.len()];
    let mut gi = vec![0.0; items.len()];
    for s in samples {
        let negs: Vec<&[f64]> = s.negs.iter().map(|&j| row(items, j, dim)).collect();
        let g = sample_gradient(kind, l2, row(users, s.user, dim), row(items, s.pos, dim), &negs);
        axpy(row_mut(&mut gu, s.user, dim), 1.0, &g.user);
        axpy(row_mut(&mut gi, s.pos, dim), 1.0, &g.pos);
        for (&j, gj) in s.negs.iter().zip(&g.negs) {
            axpy(row_mut(&mut gi, j, dim), 1.0, gj);
        }
    }
    (gu, gi)
}

/// Trains a model by SGD over shuffled positives with fresh uniform negatives
/// every epoch. All randomness derives from `cfg.seed`; samples are consumed
/// in a single deterministic order.
pub fn train(m: &InteractionMatrix, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if m.is_empty() {
        return Err(Error::EmptyMatrix("training input"));
    }
    let d = cfg.embedding_dim;
    let half_width = 0.1 / (d as f64).sqrt();
    let mut init = derive_rng(cfg.seed, "cf-init", &[]);
    let mut users: Vec<f64> = (0..m.n_users() * d)
        .map(|_| init.random_range(-half_width..half_width))
        .collect();
    let mut items: Vec<f64> = (0..m.n_items() * d)
        .map(|_| init.random_range(-half_width..half_width))
        .collect();

    let mut positives: Vec<(usize, usize)> = m
        .rows()
        .iter()
        .enumerate()
        .flat_map(|(u, r)| r.iter().map(move |&i| (u, i)))
        .collect();
    let graph = match cfg.model_kind {
        ModelKind::LightGcn => Some(NormalizedGraph::new(m)),
        ModelKind::Mf => None,
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = derive_rng(cfg.seed, "cf-epoch", &[epoch as u64]);
        positives.shuffle(&mut rng);
        let samples: Vec<Sample> = positives
            .iter()
            .map(|&(u, i)| Sample {
                user: u,
                pos: i,
                negs: sample_negatives(m, u, cfg.negatives_per_positive, &mut rng),
            })
            .collect();
        let total = match &graph {
            None => mf_epoch(cfg, &mut users, &mut items, &samples),
            Some(g) => gcn_epoch(cfg, g, &mut users, &mut items, &samples),
        };
        let mean = total / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }
    if users.iter().chain(&items).any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            epoch: cfg.epochs.saturating_sub(1),
            loss: f64::NAN,
        });
    }

    let mut model = TrainedModel::from_embeddings(cfg.clone(), m, users, items)?;
    model.epoch_losses = epoch_losses;
    Ok(model)
}

fn mf_epoch(cfg: &TrainConfig, users: &mut [f64], items: &mut [f64], samples: &[Sample]) -> f64 {
    let d = cfg.embedding_dim;
    let lr = cfg.learning_rate;
    let mut total = 0.0;
    for s in samples {
        if cfg.loss == LossKind::Bpr && s.negs.is_empty() {
            continue;
        }
        let g = {
            let negs: Vec<&[f64]> = s.negs.iter().map(|&j| row(items, j, d)).collect();
            sample_gradient(cfg.loss, cfg.l2_reg, row(users, s.user, d), row(items, s.pos, d), &negs)
        };
        total += g.loss;
        axpy(row_mut(users, s.user, d), -lr, &g.user);
        axpy(row_mut(items, s.pos, d), -lr, &g.pos);
        for (&j, gj) in s.negs.iter().zip(&g.negs) {
            axpy(row_mut(items, j, d), -lr, gj);
        }
    }
    total
}

/// Mini-batch SGD through the propagation: gradients are taken at the
/// propagated embeddings, pulled back through the (symmetric) layer-mean
/// operator and applied to the base embeddings.
fn gcn_epoch(
    cfg: &TrainConfig,
    graph: &NormalizedGraph,
    users: &mut [f64],
    items: &mut [f64],
    samples: &[Sample],
) -> f64 {
    let d = cfg.embedding_dim;
    let layers = cfg.lightgcn_layers;
    let lr = cfg.learning_rate;
    let mut total = 0.0;
    for batch in samples.chunks(GCN_BATCH) {
        let (pu, pi) = graph.layer_mean(users, items, d, layers);
        let mut gu = vec![0.0; users.len()];
        let mut gi = vec![0.0; items.len()];
        let mut touched_u = vec![false; users.len() / d];
        let mut touched_i = vec![false; items.len() / d];
        for s in batch {
            if cfg.loss == LossKind::Bpr && s.negs.is_empty() {
                continue;
            }
            let negs: Vec<&[f64]> = s.negs.iter().map(|&j| row(&pi, j, d)).collect();
            let g = sample_gradient(cfg.loss, 0.0, row(&pu, s.user, d), row(&pi, s.pos, d), &negs);
            total += g.loss;
            axpy(row_mut(&mut gu, s.user, d), 1.0, &g.user);
            axpy(row_mut(&mut gi, s.pos, d), 1.0, &g.pos);
            touched_u[s.user] = true;
            touched_i[s.pos] = true;
            for (&j, gj) in s.negs.iter().zip(&g.negs) {
                axpy(row_mut(&mut gi, j, d), 1.0, gj);
                touched_i[j] = true;
            }
        }
        let (mut bu, mut bi) = graph.layer_mean(&gu, &gi, d, layers);
        for (u, _) in touched_u.iter().enumerate().filter(|(_, &t)| t) {
            axpy(row_mut(&mut bu, u, d), cfg.l2_reg, row(users, u, d));
            total += 0.5 * cfg.l2_reg * row(users, u, d).iter().map(|x| x * x).sum::<f64>();
        }
        for (i, _) in touched_i.iter().enumerate().filter(|(_, &t)| t) {
            axpy(row_mut(&mut bi, i, d), cfg.l2_reg, row(items, i, d));
            total += 0.5 * cfg.l2_reg * row(items, i, d).iter().map(|x| x * x).sum::<f64>();
        }
        axpy(users, -lr, &bu);
        axpy(items, -lr, &bi);
    }
    total
}
