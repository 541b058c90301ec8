//! Victim-side measurement: HR/NDCG/MRR@K of the target item for the target
//! users and for all real users, before and after fake users are injected.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::allocator::AllocatorKind;
use crate::attackers::{AttackerKind, FakeUserBlock, FAKE_ID_PREFIX};
use crate::cf::{train, LossKind, ModelKind, TrainConfig, TrainedModel};
use crate::dataset::{InteractionMatrix, TargetSpec};
use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 2] = [10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserGroup {
    Target,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Before,
    After,
}

impl UserGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            UserGroup::Target => "target",
            UserGroup::All => "all",
        }
    }
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Before => "before",
            Phase::After => "after",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

impl Metrics {
    /// Single-relevant-item metrics for a 1-based `rank` (`None` = unrankable).
    pub fn at_rank(rank: Option<usize>, k: usize) -> Metrics {
        match rank {
            Some(r) if r >= 1 && r <= k => Metrics {
                hr: 1.0,
                ndcg: 1.0 / ((r + 1) as f64).log2(),
                mrr: 1.0 / r as f64,
            },
            _ => Metrics::default(),
        }
    }

    fn mean(items: impl IntoIterator<Item = Metrics>) -> Metrics {
        let mut acc = Metrics::default();
        let mut n = 0usize;
        for m in items {
            acc.hr += m.hr;
            acc.ndcg += m.ndcg;
            acc.mrr += m.mrr;
            n += 1;
        }
        if n > 0 {
            acc.hr /= n as f64;
            acc.ndcg /= n as f64;
            acc.mrr /= n as f64;
        }
        acc
    }

    pub fn is_ordered(&self) -> bool {
        self.mrr <= self.ndcg + 1e-12 && self.ndcg <= self.hr + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub group: UserGroup,
    pub phase: Phase,
    pub k: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub label: String,
    pub victim: Option<ModelKind>,
    pub victim_loss: Option<LossKind>,
    pub attacker: Option<AttackerKind>,
    pub allocator: Option<AllocatorKind>,
    pub total_budget: usize,
    pub n_fakes: usize,
    pub n_target_users: usize,
    pub target_item: String,
    pub seeds: Vec<u64>,
    pub defense: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub ks: Vec<usize>,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn get(&self, group: UserGroup, phase: Phase, k: usize) -> Option<Metrics> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.phase == phase && r.k == k)
            .map(|r| r.metrics)
    }

    pub fn hr(&self, group: UserGroup, phase: Phase, k: usize) -> f64 {
        self.get(group, phase, k).map_or(f64::NAN, |m| m.hr)
    }

    /// Cell-wise mean over seed repeats; metadata from the first report,
    /// seeds concatenated.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InsufficientData("no reports to average".into()))?;
        let shape = |r: &MetricsReport| -> Vec<(UserGroup, Phase, usize)> {
            r.rows.iter().map(|x| (x.group, x.phase, x.k)).collect()
        };
        if reports.iter().any(|r| shape(r) != shape(first)) {
            return Err(Error::Contract("reports differ in shape".into()));
        }
        let mut out = first.clone();
        for (idx, row) in out.rows.iter_mut().enumerate() {
            row.metrics = Metrics::mean(reports.iter().map(|r| r.rows[idx].metrics));
        }
        out.meta.seeds = reports.iter().flat_map(|r| r.meta.seeds.clone()).collect();
        Ok(out)
    }

    /// Flat `key = value` text.
    pub fn write_kv<W: Write>(&self, mut out: W) -> Result<()> {
        let meta = serde_json::to_value(&self.meta)?;
        let mut s = String::new();
        if let serde_json::Value::Object(map) = meta {
            for (k, v) in map {
                let v = match v {
                    serde_json::Value::String(x) => x,
                    other => other.to_string(),
                };
                s.push_str(&format!("meta.{k} = {v}\n"));
            }
        }
        for r in &self.rows {
            for (name, v) in [("hr", r.metrics.hr), ("ndcg", r.metrics.ndcg), ("mrr", r.metrics.mrr)] {
                s.push_str(&format!(
                    "{}.{}.{name}@{} = {v}\n",
                    r.group.as_str(),
                    r.phase.as_str(),
                    r.k
                ));
            }
        }
        out.write_all(s.as_bytes()).map_err(|e| Error::io("<metrics report>", e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-K mean metrics of `item` over `users`; items each user liked in `real`
/// are excluded from the ranking.
pub fn group_metrics(
    model: &TrainedModel,
    real: &InteractionMatrix,
    users: &[usize],
    item: usize,
    ks: &[usize],
) -> Result<Vec<Metrics>> {
    let ranks: Vec<Option<usize>> = users
        .iter()
        .map(|&u| model.rank_of(u, item, real.row(u)))
        .collect::<Result<_>>()?;
    Ok(ks
        .iter()
        .map(|&k| Metrics::mean(ranks.iter().map(|&r| Metrics::at_rank(r, k))))
        .collect())
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K list must be non-empty and positive".into()));
    }
    Ok(())
}

/// Rows for one phase. Only indices below `real.n_users()` are evaluated, so
/// appended fake users never enter a denominator.
pub(crate) fn phase_rows(
    model: &TrainedModel,
    real: &InteractionMatrix,
    spec: &TargetSpec,
    ks: &[usize],
    phase: Phase,
) -> Result<Vec<MetricRow>> {
    if model.n_users() < real.n_users() {
        return Err(Error::Contract("model covers fewer users than the real matrix".into()));
    }
    let all: Vec<usize> = (0..real.n_users()).collect();
    if spec.target_users.iter().any(|&u| u >= real.n_users()) {
        return Err(Error::Contract("a target user is not a real user".into()));
    }
    let mut rows = Vec::new();
    for (group, users) in [(UserGroup::Target, spec.target_users.as_slice()), (UserGroup::All, &all)] {
        let per_k = group_metrics(model, real, users, spec.target_item, ks)?;
        rows.extend(ks.iter().zip(per_k).map(|(&k, metrics)| MetricRow { group, phase, k, metrics }));
    }
    Ok(rows)
}

pub(crate) fn check_fakes(real: &InteractionMatrix, fakes: &FakeUserBlock) -> Result<()> {
    if fakes.n_items != real.n_items() {
        return Err(Error::Contract(format!(
            "fake block has {} items, real matrix has {}",
            fakes.n_items,
            real.n_items()
        )));
    }
    if real.user_ids().iter().any(|id| id.starts_with(FAKE_ID_PREFIX)) {
        return Err(Error::Contract("real matrix already contains fake users".into()));
    }
    Ok(())
}

pub(crate) fn meta_for(
    real: &InteractionMatrix,
    fakes: &FakeUserBlock,
    spec: &TargetSpec,
    victim: &TrainConfig,
    seed: u64,
) -> ReportMeta {
    ReportMeta {
        victim: Some(victim.model_kind),
        victim_loss: Some(victim.loss),
        attacker: fakes.provenance.iter().find_map(|p| match p.origin {
            crate::attackers::ProfileOrigin::Attacker(kind) => Some(kind),
            _ => None,
        }),
        n_fakes: fakes.len(),
        n_target_users: spec.target_users.len(),
        target_item: real.item_ids()[spec.target_item].clone(),
        seeds: vec![seed],
        ..Default::default()
    }
}

/// Trains the victim on the real data and on real + fakes with the same seed
/// and reports both phases.
pub fn evaluate(
    real: &InteractionMatrix,
    fakes: &FakeUserBlock,
    spec: &TargetSpec,
    victim: &TrainConfig,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsReport> {
    check_ks(ks)?;
    check_fakes(real, fakes)?;
    spec.validate(real)?;
    let cfg = victim.with_seed(seed);
    let before = train(real, &cfg)?;
    let mut rows = phase_rows(&before, real, spec, ks, Phase::Before)?;
    let stacked = fakes.stack_onto(real)?;
    let after = train(&stacked, &cfg)?;
    rows.extend(phase_rows(&after, real, spec, ks, Phase::After)?);
    Ok(MetricsReport {
        meta: meta_for(real, fakes, spec, victim, seed),
        ks: ks.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub group: UserGroup,
    pub k: usize,
    pub metric: String,
    pub before: f64,
    pub after: f64,
    /// `after - before`.
    pub lift: f64,
    /// `after` minus the first-ranked report's `after`.
    pub vs_top: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub order: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn write_delimited<W: Write>(&self, sep: char, mut out: W) -> Result<()> {
        let mut s = ["method", "group", "k", "metric", "before", "after", "lift", "vs_top"].join(&sep.to_string());
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}\n",
                r.label,
                r.group.as_str(),
                r.k,
                r.metric,
                r.before,
                r.after,
                r.lift,
                r.vs_top
            ));
        }
        out.write_all(s.as_bytes()).map_err(|e| Error::io("<comparison>", e))
    }

    /// Short human-readable ranking by target-user HR.
    pub fn summary(&self, k: usize) -> String {
        let mut s = String::new();
        for r in self
            .rows
            .iter()
            .filter(|r| r.group == UserGroup::Target && r.k == k && r.metric == "hr")
        {
            s.push_str(&format!(
                "{:<24} HR@{k} {:.4} -> {:.4} (lift {:+.4}, vs top {:+.4})\n",
                r.label, r.before, r.after, r.lift, r.vs_top
            ));
        }
        s
    }
}

/// Side-by-side table ordered by after-attack target-user HR at the smallest
/// K (descending; ties keep input order).
pub fn compare(reports: &[MetricsReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InsufficientData("nothing to compare".into()))?;
    if reports.iter().any(|r| r.ks != first.ks) {
        return Err(Error::Contract("reports use different K sets".into()));
    }
    let k0 = *first.ks.iter().min().ok_or_else(|| Error::Contract("empty K set".into()))?;
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        let ha = reports[a].hr(UserGroup::Target, Phase::After, k0);
        let hb = reports[b].hr(UserGroup::Target, Phase::After, k0);
        hb.total_cmp(&ha)
    });
    let top = &reports[order[0]];
    let label = |idx: usize| {
        let l = &reports[idx].meta.label;
        if l.is_empty() { format!("report{idx}") } else { l.clone() }
    };
    let mut rows = Vec::new();
    for &idx in &order {
        let r = &reports[idx];
        for group in [UserGroup::Target, UserGroup::All] {
            for &k in &r.ks {
                let (Some(b), Some(a), Some(t)) = (
                    r.get(group, Phase::Before, k),
                    r.get(group, Phase::After, k),
                    top.get(group, Phase::After, k),
                ) else {
                    return Err(Error::Contract(format!("report {idx} lacks {} @{k}", group.as_str())));
                };
                for (name, bv, av, tv) in [
                    ("hr", b.hr, a.hr, t.hr),
                    ("ndcg", b.ndcg, a.ndcg, t.ndcg),
                    ("mrr", b.mrr, a.mrr, t.mrr),
                ] {
                    rows.push(ComparisonRow {
                        label: label(idx),
                        group,
                        k,
                        metric: name.into(),
                        before: bv,
                        after: av,
                        lift: av - bv,
                        vs_top: av - tv,
                    });
                }
            }
        }
    }
    Ok(Comparison {
        order: order.into_iter().map(label).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::Allocation;
    use crate::attackers::{generate, AttackerConfig};
    use crate::seed::rng_from;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn rank_formulas() {
        let m = Metrics::at_rank(Some(3), 10);
        assert_eq!(m.hr, 1.0);
        assert!((m.ndcg - 0.5).abs() < 1e-15);
        assert!((m.mrr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(Metrics::at_rank(Some(11), 10), Metrics::default());
        assert_eq!(Metrics::at_rank(None, 10), Metrics::default());
        assert_eq!(Metrics::at_rank(Some(1), 1), Metrics { hr: 1.0, ndcg: 1.0, mrr: 1.0 });
    }

    #[test]
    fn metrics_against_listed_rankings() {
        let mut rng = rng_from(3);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let mut list: Vec<usize> = (0..n).collect();
            list.shuffle(&mut rng);
            let target = rng.random_range(0..25);
            let k = rng.random_range(1..=20);
            // position of the target in the top-k prefix of the list
            let pos = list.iter().take(k).position(|&x| x == target);
            let (hr, ndcg, mrr) = match pos {
                Some(p) => (1.0, 1.0 / ((p + 2) as f64).log2(), 1.0 / (p + 1) as f64),
                None => (0.0, 0.0, 0.0),
            };
            let rank = list.iter().position(|&x| x == target).map(|p| p + 1);
            let m = Metrics::at_rank(rank, k);
            assert!((m.hr - hr).abs() < 1e-12);
            assert!((m.ndcg - ndcg).abs() < 1e-12);
            assert!((m.mrr - mrr).abs() < 1e-12);
            assert!(m.is_ordered());
        }
    }

    fn fixture() -> (InteractionMatrix, TargetSpec) {
        let mut rng = rng_from(8);
        let rows = (0..40)
            .map(|u| (0..20).filter(|&i| i != 19 || u >= 10).filter(|_| rng.random_bool(0.25)).collect())
            .collect();
        let m = InteractionMatrix::from_rows(20, rows).unwrap();
        let spec = TargetSpec {
            target_item: 19,
            target_users: (0..6).collect(),
            popularity_mode: None,
            selection_seed: 0,
        };
        (m, spec)
    }

    fn quick() -> TrainConfig {
        TrainConfig { embedding_dim: 8, epochs: 10, ..Default::default() }
    }

    fn fakes_for(m: &InteractionMatrix, spec: &TargetSpec, t: usize) -> FakeUserBlock {
        let alloc = Allocation {
            target_users: spec.target_users.clone(),
            budgets: vec![t; spec.target_users.len()],
            total_budget: t * spec.target_users.len(),
            objective: None,
        };
        generate(&AttackerConfig { profile_size: Some(4), ..Default::default() }, &alloc, spec, m).unwrap()
    }

    #[test]
    fn evaluate_shapes_and_ordering() {
        let (m, spec) = fixture();
        let fakes = fakes_for(&m, &spec, 2);
        let report = evaluate(&m, &fakes, &spec, &quick(), &DEFAULT_KS, 4).unwrap();
        assert_eq!(report.rows.len(), 2 * 2 * 2);
        assert_eq!(report.meta.n_fakes, 12);
        for r in &report.rows {
            assert!(r.metrics.is_ordered(), "{r:?}");
            assert!((0.0..=1.0).contains(&r.metrics.hr));
        }
    }

    #[test]
    fn before_phase_ignores_fakes() {
        let (m, spec) = fixture();
        let a = evaluate(&m, &fakes_for(&m, &spec, 1), &spec, &quick(), &[5], 2).unwrap();
        let b = evaluate(&m, &fakes_for(&m, &spec, 3), &spec, &quick(), &[5], 2).unwrap();
        for g in [UserGroup::Target, UserGroup::All] {
            assert_eq!(a.get(g, Phase::Before, 5), b.get(g, Phase::Before, 5));
        }
    }

    #[test]
    fn rejects_mismatched_item_space() {
        let (m, spec) = fixture();
        let mut fakes = fakes_for(&m, &spec, 1);
        fakes.n_items = 21;
        assert!(matches!(evaluate(&m, &fakes, &spec, &quick(), &[5], 0), Err(Error::Contract(_))));
        let stacked = fakes_for(&m, &spec, 1).stack_onto(&m).unwrap();
        assert!(evaluate(&stacked, &fakes_for(&m, &spec, 1), &spec, &quick(), &[5], 0).is_err());
    }

    fn report_with(label: &str, hr_after: f64) -> MetricsReport {
        let mut rows = Vec::new();
        for group in [UserGroup::Target, UserGroup::All] {
            for phase in [Phase::Before, Phase::After] {
                for k in [10, 20] {
                    let hr = if phase == Phase::After { hr_after } else { 0.1 };
                    rows.push(MetricRow { group, phase, k, metrics: Metrics { hr, ndcg: hr / 2.0, mrr: hr / 3.0 } });
                }
            }
        }
        MetricsReport {
            meta: ReportMeta { label: label.into(), ..Default::default() },
            ks: vec![10, 20],
            rows,
        }
    }

    #[test]
    fn compare_orders_and_deltas() {
        let single = compare(&[report_with("a", 0.2)]).unwrap();
        assert!(single.rows.iter().all(|r| r.vs_top == 0.0));
        let hr_row = single.rows.iter().find(|r| r.metric == "hr").unwrap();
        assert!((hr_row.lift - 0.1).abs() < 1e-12);

        let same = compare(&[report_with("a", 0.2), report_with("b", 0.2)]).unwrap();
        assert!(same.rows.iter().all(|r| r.vs_top == 0.0));

        let ranked = compare(&[report_with("low", 0.2), report_with("high", 0.3)]).unwrap();
        assert_eq!(ranked.order, vec!["high", "low"]);

        let mut odd = report_with("odd", 0.2);
        odd.ks = vec![5];
        assert!(matches!(compare(&[report_with("a", 0.2), odd]), Err(Error::Contract(_))));

        let mut text = Vec::new();
        ranked.write_delimited(',', &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.starts_with("method,group,k,metric,before,after,lift,vs_top\nhigh,target,10,hr,"));
    }

    #[test]
    fn mean_and_serialization() {
        let avg = MetricsReport::mean(&[report_with("a", 0.2), report_with("a", 0.4)]).unwrap();
        assert!((avg.hr(UserGroup::Target, Phase::After, 10) - 0.3).abs() < 1e-12);
        let back = MetricsReport::from_json(&avg.to_json().unwrap()).unwrap();
        assert_eq!(back, avg);
        let mut kv = Vec::new();
        avg.write_kv(&mut kv).unwrap();
        let kv = String::from_utf8(kv).unwrap();
        assert!(kv.contains("meta.label = a\n"));
        assert!(kv.contains("target.after.hr@10 = "));
    }
}
