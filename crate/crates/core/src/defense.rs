//! Unsupervised fake-user detectors and retraining on the filtered data.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::attackers::{FakeUserBlock, FAKE_ID_PREFIX};
use crate::cf::{train, TrainConfig};
use crate::dataset::{InteractionMatrix, TargetSpec};
use crate::error::{Error, Result};
use crate::evaluator::{check_fakes, meta_for, phase_rows, MetricsReport, Phase};

/// Item columns kept for the PCA detector (most popular first).
pub const PCA_ITEM_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Pca,
    Fap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FapParams {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FapParams {
    fn default() -> Self {
        FapParams {
            damping: 0.85,
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detector: DetectorKind,
    pub params: serde_json::Value,
    /// One score per stacked user.
    pub scores: Vec<f64>,
    /// Ascending user indices.
    pub flagged: Vec<usize>,
    /// Degenerate-input and convergence remarks.
    pub notes: Vec<String>,
    /// Per-iteration max belief change (FAP only).
    pub trace: Vec<f64>,
    pub confusion: Option<Confusion>,
}

impl DetectionResult {
    pub fn is_flagged(&self, u: usize) -> bool {
        self.flagged.binary_search(&u).is_ok()
    }

    /// Fills the confusion counts from `fake::` user ids.
    pub fn label_with(&mut self, stacked: &InteractionMatrix) -> Result<()> {
        if stacked.n_users() != self.scores.len() {
            return Err(Error::Contract("detection covers a different matrix".into()));
        }
        let mut c = Confusion::default();
        for (u, id) in stacked.user_ids().iter().enumerate() {
            match (id.starts_with(FAKE_ID_PREFIX), self.is_flagged(u)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        self.confusion = Some(c);
        Ok(())
    }

    /// `user_id<sep>score<sep>flagged<sep>is_fake` lines.
    pub fn write_delimited<W: Write>(&self, stacked: &InteractionMatrix, sep: char, mut out: W) -> Result<()> {
        if stacked.n_users() != self.scores.len() {
            return Err(Error::Contract("detection covers a different matrix".into()));
        }
        let mut s = format!("user_id{sep}score{sep}flagged{sep}is_fake\n");
        for (u, id) in stacked.user_ids().iter().enumerate() {
            s.push_str(&format!(
                "{id}{sep}{}{sep}{}{sep}{}\n",
                self.scores[u],
                u8::from(self.is_flagged(u)),
                u8::from(id.starts_with(FAKE_ID_PREFIX))
            ));
        }
        out.write_all(s.as_bytes()).map_err(|e| Error::io("<detection>", e))
    }
}

fn check_flag_count(stacked: &InteractionMatrix, n_flag: usize) -> Result<()> {
    if n_flag >= stacked.n_users() {
        return Err(Error::Contract(format!(
            "cannot flag {n_flag} of {} users",
            stacked.n_users()
        )));
    }
    Ok(())
}

/// Indices of the `n` best users under `better`, ties to the lower index,
/// returned ascending.
fn pick(scores: &[f64], n: usize, better: impl Fn(f64, f64) -> std::cmp::Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| better(scores[a], scores[b]).then(a.cmp(&b)));
    let mut out = order[..n].to_vec();
    out.sort_unstable();
    out
}

/// PCA subspace detector. A user's score is the energy of its z-scored row
/// left outside the dominant item-covariance directions; a block of
/// near-identical profiles spans one of those directions, so the users the
/// subspace explains best are flagged.
pub fn pca_detect(stacked: &InteractionMatrix, n_flag: usize, n_components: usize) -> Result<DetectionResult> {
    check_flag_count(stacked, n_flag)?;
    if n_components == 0 {
        return Err(Error::Config("n_components must be at least 1".into()));
    }
    let n = stacked.n_users();
    let mut notes = Vec::new();
    let degrees = stacked.item_degrees();
    let mut columns: Vec<usize> = stacked.items_by_popularity();
    if columns.len() > PCA_ITEM_CAP {
        notes.push(format!("items capped at {PCA_ITEM_CAP} most popular"));
        columns.truncate(PCA_ITEM_CAP);
    }
    // binary column: mean p, std sqrt(p(1-p)); constant columns carry no variance
    columns.retain(|&i| degrees[i] > 0 && degrees[i] < n);
    columns.sort_unstable();
    let d = columns.len();
    let mut scores = vec![0.0; n];
    let mut used = 0;
    if d == 0 || n < 2 {
        notes.push("no item column has variance".into());
    } else {
        let mut slot = vec![usize::MAX; stacked.n_items()];
        for (c, &i) in columns.iter().enumerate() {
            slot[i] = c;
        }
        let mean: Vec<f64> = columns.iter().map(|&i| degrees[i] as f64 / n as f64).collect();
        let sd: Vec<f64> = mean.iter().map(|p| (p * (1.0 - p)).sqrt()).collect();
        let mut z = DMatrix::<f64>::zeros(n, d);
        for c in 0..d {
            let off = -mean[c] / sd[c];
            for u in 0..n {
                z[(u, c)] = off;
            }
        }
        for u in 0..n {
            for &i in stacked.row(u) {
                let c = slot[i];
                if c != usize::MAX {
                    z[(u, c)] = (1.0 - mean[c]) / sd[c];
                }
            }
        }
        let cov = z.tr_mul(&z) / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let rank = order
            .iter()
            .filter(|&&k| eig.eigenvalues[k] > top * 1e-10 && eig.eigenvalues[k] > 0.0)
            .count();
        used = n_components.min(rank);
        if used < n_components {
            notes.push(format!("covariance rank {rank}: using {used} components"));
        }
        for (u, s) in scores.iter_mut().enumerate() {
            *s = z.row(u).iter().map(|x| x * x).sum();
        }
        for &k in &order[..used] {
            let proj = &z * eig.eigenvectors.column(k);
            for (s, p) in scores.iter_mut().zip(proj.iter()) {
                *s -= p * p;
            }
        }
        for s in &mut scores {
            *s = s.max(0.0);
        }
    }
    Ok(DetectionResult {
        detector: DetectorKind::Pca,
        params: serde_json::json!({
            "n_flag": n_flag,
            "n_components": n_components,
            "components_used": used,
            "item_cap": PCA_ITEM_CAP,
        }),
        flagged: pick(&scores, n_flag, |a, b| a.total_cmp(&b)),
        scores,
        notes,
        trace: Vec::new(),
        confusion: None,
    })
}

/// Belief propagation from a suspicious item: user belief is the damped mean
/// of its items' beliefs, item belief the damped mean of its users' beliefs,
/// with the hinted item pinned at 1. Users with the largest belief are flagged.
pub fn fap_detect(
    stacked: &InteractionMatrix,
    target_hint: usize,
    n_flag: usize,
    params: &FapParams,
) -> Result<DetectionResult> {
    check_flag_count(stacked, n_flag)?;
    if target_hint >= stacked.n_items() {
        return Err(Error::Index { kind: "item", index: target_hint, bound: stacked.n_items() });
    }
    if !(params.damping > 0.0 && params.damping < 1.0) || !(params.tol > 0.0) {
        return Err(Error::Config("damping must lie in (0, 1) and tol be positive".into()));
    }
    let cols = stacked.item_users();
    let mut items = vec![0.0; stacked.n_items()];
    items[target_hint] = 1.0;
    let mut users = vec![0.0; stacked.n_users()];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iters {
        let mut change: f64 = 0.0;
        for (u, b) in users.iter_mut().enumerate() {
            let row = stacked.row(u);
            let next = if row.is_empty() {
                0.0
            } else {
                params.damping * row.iter().map(|&i| items[i]).sum::<f64>() / row.len() as f64
            };
            change = change.max((next - *b).abs());
            *b = next;
        }
        for (i, b) in items.iter_mut().enumerate() {
            let next = if i == target_hint {
                1.0
            } else if cols[i].is_empty() {
                0.0
            } else {
                params.damping * cols[i].iter().map(|&u| users[u]).sum::<f64>() / cols[i].len() as f64
            };
            change = change.max((next - *b).abs());
            *b = next;
        }
        trace.push(change);
        if change < params.tol {
            converged = true;
            break;
        }
    }
    let mut notes = Vec::new();
    if !converged {
        notes.push(format!("not converged after {} iterations", params.max_iters));
    }
    Ok(DetectionResult {
        detector: DetectorKind::Fap,
        params: serde_json::json!({
            "n_flag": n_flag,
            "target_hint": target_hint,
            "damping": params.damping,
            "max_iters": params.max_iters,
            "tol": params.tol,
        }),
        flagged: pick(&users, n_flag, |a, b| b.total_cmp(&a)),
        scores: users,
        notes,
        trace,
        confusion: None,
    })
}

/// Drops every flagged user's interactions (real users included), retrains
/// the victim and reports before/after exactly like [`crate::evaluator::evaluate`].
pub fn filter_and_evaluate(
    real: &InteractionMatrix,
    fakes: &FakeUserBlock,
    detection: &DetectionResult,
    spec: &TargetSpec,
    victim: &TrainConfig,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K list must be non-empty and positive".into()));
    }
    check_fakes(real, fakes)?;
    spec.validate(real)?;
    let stacked = fakes.stack_onto(real)?;
    if detection.scores.len() != stacked.n_users() {
        return Err(Error::Contract("detection was computed on a different matrix".into()));
    }
    let filtered = if detection.flagged.is_empty() {
        stacked
    } else {
        let rows = stacked
            .rows()
            .iter()
            .enumerate()
            .map(|(u, r)| if detection.is_flagged(u) { Vec::new() } else { r.clone() })
            .collect();
        InteractionMatrix::new(
            stacked.n_items(),
            rows,
            stacked.user_ids().to_vec(),
            stacked.item_ids().to_vec(),
        )?
    };
    let cfg = victim.with_seed(seed);
    let before = train(real, &cfg)?;
    let mut rows = phase_rows(&before, real, spec, ks, Phase::Before)?;
    let after = train(&filtered, &cfg)?;
    rows.extend(phase_rows(&after, real, spec, ks, Phase::After)?);
    let mut meta = meta_for(real, fakes, spec, victim, seed);
    meta.defense = Some(format!("{:?}", detection.detector).to_lowercase());
    Ok(MetricsReport { meta, ks: ks.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attackers::{ProfileOrigin, Provenance};
    use crate::evaluator::evaluate;
    use crate::seed::rng_from;
    use rand::Rng;

    fn diverse_with_clones(seed: u64) -> (InteractionMatrix, FakeUserBlock) {
        let mut rng = rng_from(seed);
        let rows: Vec<Vec<usize>> = (0..50)
            .map(|_| (0..30).filter(|_| rng.random_bool(0.3)).collect())
            .collect();
        let real = InteractionMatrix::from_rows(30, rows).unwrap();
        let fake_row = vec![0, 1, 2, 29];
        let fakes = FakeUserBlock {
            target_item: 29,
            n_items: 30,
            profile_size: 4,
            rows: vec![fake_row; 20],
            provenance: vec![
                Provenance { origin: ProfileOrigin::MaxSimilarity, template_user: None, assigned_user: None };
                20
            ],
            seed: 0,
        };
        (real, fakes)
    }

    #[test]
    fn zero_flags() {
        let (real, fakes) = diverse_with_clones(1);
        let stacked = fakes.stack_onto(&real).unwrap();
        assert!(pca_detect(&stacked, 0, 3).unwrap().flagged.is_empty());
        assert!(fap_detect(&stacked, 29, 0, &FapParams::default()).unwrap().flagged.is_empty());
        assert!(pca_detect(&stacked, stacked.n_users(), 3).is_err());
    }

    #[test]
    fn pca_finds_identical_block() {
        for seed in 0..3 {
            let (real, fakes) = diverse_with_clones(seed);
            let stacked = fakes.stack_onto(&real).unwrap();
            let mut det = pca_detect(&stacked, 20, 3).unwrap();
            det.label_with(&stacked).unwrap();
            let c = det.confusion.unwrap();
            assert_eq!(c.total(), 70);
            assert!(c.tp >= 15, "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn pca_identical_users_tie_to_low_indices() {
        let m = InteractionMatrix::from_rows(3, vec![vec![0, 2]; 6]).unwrap();
        let det = pca_detect(&m, 2, 2).unwrap();
        assert!(det.scores.iter().all(|&s| s == 0.0));
        assert_eq!(det.flagged, vec![0, 1]);
        assert!(!det.notes.is_empty());
    }

    #[test]
    fn pca_is_permutation_equivariant() {
        let (real, fakes) = diverse_with_clones(4);
        let stacked = fakes.stack_onto(&real).unwrap();
        let n = stacked.n_users();
        let perm: Vec<usize> = (0..n).map(|k| (k * 37 + 11) % n).collect();
        let shuffled = stacked.select_users(&perm);
        let a = pca_detect(&stacked, 5, 3).unwrap();
        let b = pca_detect(&shuffled, 5, 3).unwrap();
        for (k, &u) in perm.iter().enumerate() {
            assert!((a.scores[u] - b.scores[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn fap_reachability_and_bounds() {
        // user 2 shares nothing with the hinted item's component
        let m = InteractionMatrix::from_rows(4, vec![vec![0, 1], vec![1], vec![2, 3]]).unwrap();
        let det = fap_detect(&m, 0, 1, &FapParams::default()).unwrap();
        assert_eq!(det.scores[2], 0.0);
        assert!(det.scores[0] > det.scores[1] && det.scores[1] > 0.0);
        assert!(det.scores.iter().all(|b| (0.0..=1.0).contains(b)));
        assert_eq!(det.flagged, vec![0]);
    }

    #[test]
    fn fap_contracts_and_vanishes_with_small_damping() {
        let (real, fakes) = diverse_with_clones(2);
        let stacked = fakes.stack_onto(&real).unwrap();
        let det = fap_detect(&stacked, 29, 20, &FapParams::default()).unwrap();
        assert!(det.trace.windows(2).skip(1).all(|w| w[1] <= w[0] + 1e-15), "{:?}", det.trace);
        let tiny = fap_detect(&stacked, 29, 20, &FapParams { damping: 1e-9, ..Default::default() }).unwrap();
        assert!(tiny.scores.iter().all(|&b| b < 1e-8));
        let short = fap_detect(&stacked, 29, 20, &FapParams { max_iters: 1, tol: 1e-300, ..Default::default() }).unwrap();
        assert!(!short.notes.is_empty());
    }

    #[test]
    fn fap_ranks_short_fake_profiles_high() {
        let (real, fakes) = diverse_with_clones(3);
        let stacked = fakes.stack_onto(&real).unwrap();
        let mut det = fap_detect(&stacked, 29, 20, &FapParams::default()).unwrap();
        det.label_with(&stacked).unwrap();
        assert!(det.confusion.unwrap().recall() >= 0.5);
    }

    #[test]
    fn filtering_nothing_matches_plain_evaluation() {
        let (real, fakes) = diverse_with_clones(5);
        let spec = TargetSpec {
            target_item: 29,
            target_users: (0..50).filter(|&u| !real.likes(u, 29)).take(5).collect(),
            popularity_mode: None,
            selection_seed: 0,
        };
        let victim = TrainConfig { embedding_dim: 8, epochs: 5, ..Default::default() };
        let stacked = fakes.stack_onto(&real).unwrap();
        let empty = pca_detect(&stacked, 0, 3).unwrap();
        let filtered = filter_and_evaluate(&real, &fakes, &empty, &spec, &victim, &[5, 10], 3).unwrap();
        let plain = evaluate(&real, &fakes, &spec, &victim, &[5, 10], 3).unwrap();
        assert_eq!(filtered.rows, plain.rows);

        let mut det = pca_detect(&stacked, 20, 3).unwrap();
        det.flagged = (50..70).collect();
        let cleaned = filter_and_evaluate(&real, &fakes, &det, &spec, &victim, &[5], 3).unwrap();
        let clean_before = cleaned.get(crate::evaluator::UserGroup::Target, Phase::Before, 5).unwrap();
        assert_eq!(cleaned.rows.len(), 4);
        assert!(clean_before.is_ordered());

        let mut text = Vec::new();
        det.write_delimited(&stacked, '\t', &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert_eq!(text.lines().count(), 71);
        assert!(text.lines().last().unwrap().ends_with("\t1\t1"));
    }
}
