//! Per-sample losses and their gradients for dot-product scorers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Bpr,
}

/// One positive interaction with its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub user: usize,
    pub pos: usize,
    pub negs: Vec<usize>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss value and its derivatives with respect to the positive score and each
/// negative score.
///
/// BCE: `-ln s(x_pos) - sum_j ln(1 - s(x_j))`.
/// BPR: `-sum_j ln s(x_pos - x_j)`.
pub fn score_terms(kind: LossKind, pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
    match kind {
        LossKind::Bce => {
            let mut loss = softplus(-pos);
            let d_pos = sigmoid(pos) - 1.0;
            let d_negs = negs
                .iter()
                .map(|&s| {
                    loss += softplus(s);
                    sigmoid(s)
                })
                .collect();
            (loss, d_pos, d_negs)
        }
        LossKind::Bpr => {
            let mut loss = 0.0;
            let mut d_pos = 0.0;
            let d_negs = negs
                .iter()
                .map(|&s| {
                    let x = pos - s;
                    loss += softplus(-x);
                    let g = sigmoid(x) - 1.0;
                    d_pos += g;
                    -g
                })
                .collect();
            (loss, d_pos, d_negs)
        }
    }
}

/// Gradient of one sample's loss (plus `l2/2` times the squared norm of every
/// embedding row the sample touches) with respect to those rows.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub loss: f64,
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub negs: Vec<Vec<f64>>,
}

pub fn sample_gradient(
    kind: LossKind,
    l2: f64,
    user_emb: &[f64],
    pos_emb: &[f64],
    neg_embs: &[&[f64]],
) -> SampleGradient {
    let pos_score = dot(user_emb, pos_emb);
    let neg_scores: Vec<f64> = neg_embs.iter().map(|e| dot(user_emb, e)).collect();
    let (mut loss, d_pos, d_negs) = score_terms(kind, pos_score, &neg_scores);

    let mut user: Vec<f64> = user_emb.iter().zip(pos_emb).map(|(u, p)| d_pos * p + l2 * u).collect();
    let pos: Vec<f64> = pos_emb.iter().zip(user_emb).map(|(p, u)| d_pos * u + l2 * p).collect();
    let mut negs = Vec::with_capacity(neg_embs.len());
    for (e, &d) in neg_embs.iter().zip(&d_negs) {
        for (g, x) in user.iter_mut().zip(e.iter()) {
            *g += d * x;
        }
        negs.push(e.iter().zip(user_emb).map(|(x, u)| d * u + l2 * x).collect());
        loss += 0.5 * l2 * dot(e, e);
    }
    loss += 0.5 * l2 * (dot(user_emb, user_emb) + dot(pos_emb, pos_emb));
    SampleGradient {
        loss,
        user,
        pos,
        negs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_primitives() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn score_derivatives_match_differences() {
        let h = 1e-6;
        for kind in [LossKind::Bce, LossKind::Bpr] {
            let negs = [0.3, -1.2];
            let (_, d_pos, d_negs) = score_terms(kind, 0.7, &negs);
            let f = |p: f64, n: &[f64]| score_terms(kind, p, n).0;
            let fd = (f(0.7 + h, &negs) - f(0.7 - h, &negs)) / (2.0 * h);
            assert!((fd - d_pos).abs() < 1e-8);
            let fd = (f(0.7, &[0.3 + h, -1.2]) - f(0.7, &[0.3 - h, -1.2])) / (2.0 * h);
            assert!((fd - d_negs[0]).abs() < 1e-8);
        }
    }
}
