//! Walk counting on the bipartite interaction graph, the path-count uplift
//! proxy, and the path-count vs. prediction-score correlation report.
//!
//! With `A = [[0, D], [D^T, 0]]`, the number of length-`k` walks from user `u`
//! to item `i` is `(A^k)_{u,i}`. Counts are computed by repeated sparse
//! matrix-vector products seeded at `u`; `A^k` is never materialized.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::attackers::FakeUserBlock;
use crate::cf::TrainedModel;
use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};
use crate::seed::rng_from;

pub const SUPPORTED_ORDERS: [usize; 4] = [1, 3, 5, 7];
pub const DEFAULT_SAMPLE_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathQuery {
    pub pairs: Vec<(usize, usize)>,
    pub order: usize,
}

impl PathQuery {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        PathQuery { pairs, order: 3 }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }
}

fn check_order(order: usize) -> Result<()> {
    if SUPPORTED_ORDERS.contains(&order) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "walk order {order} not in {SUPPORTED_ORDERS:?}"
        )))
    }
}

/// Number of length-`order` walks from user `u` to every item.
///
/// `cols` is the item->users transpose of `m`.
pub fn walks_from_user(
    m: &InteractionMatrix,
    cols: &[Vec<usize>],
    u: usize,
    order: usize,
) -> Result<Vec<u128>> {
    check_order(order)?;
    let mut on_items = vec![0u128; m.n_items()];
    for &i in m.row(u) {
        on_items[i] = 1;
    }
    for _ in 0..order / 2 {
        // items -> users
        let mut on_users = vec![0u128; m.n_users()];
        for (i, &w) in on_items.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for &v in &cols[i] {
                on_users[v] = on_users[v].checked_add(w).ok_or(Error::Overflow)?;
            }
        }
        // users -> items
        let mut next = vec![0u128; m.n_items()];
        for (v, &w) in on_users.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for &i in m.row(v) {
                next[i] = next[i].checked_add(w).ok_or(Error::Overflow)?;
            }
        }
        on_items = next;
    }
    Ok(on_items)
}

pub fn path_counts(m: &InteractionMatrix, q: &PathQuery) -> Result<Vec<u128>> {
    check_order(q.order)?;
    for &(u, i) in &q.pairs {
        if u >= m.n_users() {
            return Err(Error::Index {
                kind: "user",
                index: u,
                bound: m.n_users(),
            });
        }
        if i >= m.n_items() {
            return Err(Error::Index {
                kind: "item",
                index: i,
                bound: m.n_items(),
            });
        }
    }
    let cols = m.item_users();
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(u, _)) in q.pairs.iter().enumerate() {
        by_user.entry(u).or_default().push(k);
    }
    let per_user: Vec<(usize, Vec<u128>)> = by_user
        .keys()
        .copied()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|u| walks_from_user(m, &cols, u, q.order).map(|w| (u, w)))
        .collect::<Result<_>>()?;
    let mut out = vec![0u128; q.pairs.len()];
    for (u, walks) in per_user {
        for &k in &by_user[&u] {
            out[k] = walks[q.pairs[k].1];
        }
    }
    Ok(out)
}

/// Walk counts over the real matrix stacked with fake rows, `[D_r; D_f]`.
pub fn augmented_path_counts(
    real: &InteractionMatrix,
    fakes: &FakeUserBlock,
    q: &PathQuery,
) -> Result<Vec<u128>> {
    if fakes.is_empty() {
        return path_counts(real, q);
    }
    path_counts(&fakes.stack_onto(real)?, q)
}

/// `alpha`/`beta` of the proxy `alpha * count^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ProxyParams {
    fn default() -> Self {
        ProxyParams {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl ProxyParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(())
        } else {
            Err(Error::Config("proxy alpha and beta must be positive".into()))
        }
    }

    pub fn raw(&self, count: u128) -> f64 {
        self.alpha * (count as f64).powf(self.beta)
    }
}

/// `min(1, alpha * count^beta / normalizer)`.
pub fn proxy_uplift(count: u128, p: &ProxyParams, normalizer: f64) -> f64 {
    (p.raw(count) / normalizer).min(1.0)
}

/// Spearman rank correlation with average ranks for ties. Constant input
/// yields 0.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && x[order[end + 1]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            ranks[k] = avg;
        }
        start = end + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Two-sided p-value of a Spearman coefficient over `n` observations via the
/// Student-t approximation with `n - 2` degrees of freedom.
pub fn spearman_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub size: usize,
    pub mean_count: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub order: usize,
    pub n_pairs: usize,
    pub spearman_r: f64,
    pub p_value: f64,
    pub groups: Vec<GroupMean>,
}

impl CorrelationReport {
    /// Plot data: one `# ...` stats line, a column header, then
    /// `mean_count<sep>mean_score` per group.
    pub fn write_plot_data<W: Write>(&self, mut out: W, sep: char) -> Result<()> {
        let mut s = format!(
            "# order={} pairs={} groups={} spearman_r={:.6} p_value={:.6e}\nmean_count{sep}mean_score\n",
            self.order,
            self.n_pairs,
            self.groups.len(),
            self.spearman_r,
            self.p_value
        );
        for g in &self.groups {
            s.push_str(&format!("{}{sep}{}\n", g.mean_count, g.mean_score));
        }
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io("<correlation plot data>", e))
    }
}

/// Groups non-interacting user-item pairs by walk count and correlates the
/// group-mean walk counts with the group-mean prediction scores.
///
/// When the number of non-interacting pairs exceeds `sample_cap`, a seeded
/// uniform sample of `sample_cap` cells of the user x item grid is drawn and
/// interacting cells are discarded.
pub fn correlation_report(
    model: &TrainedModel,
    m: &InteractionMatrix,
    order: usize,
    n_groups: usize,
    sample_cap: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    check_order(order)?;
    if model.n_users() != m.n_users() || model.n_items() != m.n_items() {
        return Err(Error::Contract("model was not trained on this matrix".into()));
    }
    let total = m.n_users() * m.n_items();
    let mut pairs: Vec<(usize, usize)> = if total - m.nnz() <= sample_cap {
        (0..m.n_users())
            .flat_map(|u| (0..m.n_items()).map(move |i| (u, i)))
            .filter(|&(u, i)| !m.likes(u, i))
            .collect()
    } else {
        let mut rng = rng_from(seed);
        sample(&mut rng, total, sample_cap)
            .into_iter()
            .map(|c| (c / m.n_items(), c % m.n_items()))
            .filter(|&(u, i)| !m.likes(u, i))
            .collect()
    };
    pairs.sort_unstable();

    let cols = m.item_users();
    let mut users: Vec<usize> = pairs.iter().map(|&(u, _)| u).collect();
    users.dedup();
    let per_user: Vec<(Vec<u128>, Vec<f64>)> = users
        .par_iter()
        .map(|&u| Ok((walks_from_user(m, &cols, u, order)?, model.scores(u)?)))
        .collect::<Result<_>>()?;

    let mut rows: Vec<(u128, f64)> = Vec::with_capacity(pairs.len());
    let mut cursor = 0;
    for &(u, i) in &pairs {
        while users[cursor] != u {
            cursor += 1;
        }
        let (walks, scores) = &per_user[cursor];
        rows.push((walks[i], scores[i]));
    }
    // stable: equal counts keep (user, item) order
    rows.sort_by_key(|&(c, _)| c);

    let groups_n = n_groups.min(rows.len());
    if groups_n < 3 {
        return Err(Error::InsufficientData(format!(
            "{} pairs give {groups_n} groups, need at least 3",
            rows.len()
        )));
    }
    let base = rows.len() / groups_n;
    let rem = rows.len() % groups_n;
    let mut groups = Vec::with_capacity(groups_n);
    let mut start = 0;
    for g in 0..groups_n {
        let size = base + usize::from(g < rem);
        let chunk = &rows[start..start + size];
        start += size;
        groups.push(GroupMean {
            size,
            mean_count: chunk.iter().map(|&(c, _)| c as f64).sum::<f64>() / size as f64,
            mean_score: chunk.iter().map(|&(_, s)| s).sum::<f64>() / size as f64,
        });
    }
    let xs: Vec<f64> = groups.iter().map(|g| g.mean_count).collect();
    let ys: Vec<f64> = groups.iter().map(|g| g.mean_score).collect();
    let r = spearman(&xs, &ys);
    Ok(CorrelationReport {
        order,
        n_pairs: rows.len(),
        spearman_r: r,
        p_value: spearman_p_value(r, groups_n),
        groups,
    })
}
