//! Budget allocation over an uplift table: maximize `sum_u Y[u][t_u]` subject
//! to `sum_u t_u <= N`, `t_u in 0..=H`.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionMatrix, TargetSpec};
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::uplift::UpliftTable;

/// Largest search space [`allocate_bruteforce`] will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Dp,
    Uniform,
    Random,
}

/// Per-target-user budgets, aligned with the target user order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub target_users: Vec<usize>,
    pub budgets: Vec<usize>,
    pub total_budget: usize,
    /// `sum_u Y[u][t_u]` on the table the allocation was computed from.
    pub objective: Option<f64>,
}

impl Allocation {
    pub fn spent(&self) -> usize {
        self.budgets.iter().sum()
    }

    /// Objective value on `table`, summed in row order.
    pub fn objective_on(&self, table: &UpliftTable) -> Result<f64> {
        if self.target_users != table.target_users() {
            return Err(Error::Contract("allocation and table target users differ".into()));
        }
        self.budgets
            .iter()
            .enumerate()
            .try_fold(0.0, |acc, (k, &t)| Ok(acc + table.value(k, t)?))
    }

    pub fn validate(&self, max_budget: usize) -> Result<()> {
        if self.budgets.len() != self.target_users.len() {
            return Err(Error::Contract("budget vector length mismatch".into()));
        }
        if self.spent() > self.total_budget {
            return Err(Error::Contract(format!(
                "allocation spends {} of {}",
                self.spent(),
                self.total_budget
            )));
        }
        if let Some(&t) = self.budgets.iter().find(|&&t| t > max_budget) {
            return Err(Error::Contract(format!("budget {t} exceeds H={max_budget}")));
        }
        Ok(())
    }

    /// `# P_max=<v|none> N=<N>` followed by `user_id<sep>budget` lines, user
    /// ids taken from `m`.
    pub fn write<W: Write>(&self, m: &InteractionMatrix, sep: char, mut out: W) -> Result<()> {
        let p = self
            .objective
            .map_or_else(|| "none".to_string(), |v| v.to_string());
        let mut s = format!("# P_max={p} N={}\n", self.total_budget);
        for (&u, &t) in self.target_users.iter().zip(&self.budgets) {
            let id = m.user_ids().get(u).ok_or(Error::Index {
                kind: "user",
                index: u,
                bound: m.n_users(),
            })?;
            s.push_str(&format!("{id}{sep}{t}\n"));
        }
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io("<allocation>", e))
    }

    pub fn read<R: BufRead>(reader: R, m: &InteractionMatrix, sep: char) -> Result<Allocation> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty allocation file".into()))?
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut objective = None;
        let mut total_budget = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("P_max", "none")) => {}
                Some(("P_max", v)) => {
                    objective = Some(v.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?)
                }
                Some(("N", v)) => {
                    total_budget = Some(v.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?)
                }
                _ => return Err(Error::Format(format!("bad allocation header `{header}`"))),
            }
        }
        let mut target_users = Vec::new();
        let mut budgets = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, t) = line
                .split_once(sep)
                .ok_or_else(|| Error::Format(format!("bad allocation line `{line}`")))?;
            let u = m
                .user_index(id)
                .ok_or_else(|| Error::Format(format!("unknown user `{id}`")))?;
            target_users.push(u);
            budgets.push(t.trim().parse().map_err(|e: std::num::ParseIntError| Error::Format(e.to_string()))?);
        }
        Ok(Allocation {
            target_users,
            budgets,
            total_budget: total_budget.ok_or_else(|| Error::Format("missing N".into()))?,
            objective,
        })
    }
}

/// Exact group-knapsack optimum by dynamic programming.
///
/// `best[i][j]` is the best value from the first `i` users with at most `j`
/// budget; `choice[i][j]` records the budget given to user `i` there, so the
/// allocation is recovered by walking the records back from `(n, N)`. Among
/// equal values the smallest budget wins, applied from the last user backward.
pub fn allocate_dp(table: &UpliftTable, total_budget: usize) -> Allocation {
    let n = table.n_users();
    let h = table.max_budget();
    let width = total_budget + 1;
    let mut best = vec![0.0f64; width];
    let mut choice = vec![vec![0usize; width]; n];
    for (i, row) in table.values().iter().enumerate() {
        let prev = best.clone();
        for j in 0..width {
            let mut top = f64::NEG_INFINITY;
            let mut pick = 0;
            for (k, &y) in row.iter().enumerate().take(h.min(j) + 1) {
                let v = prev[j - k] + y;
                if v > top {
                    top = v;
                    pick = k;
                }
            }
            best[j] = top;
            choice[i][j] = pick;
        }
    }
    let mut budgets = vec![0usize; n];
    let mut j = total_budget;
    for i in (0..n).rev() {
        budgets[i] = choice[i][j];
        j -= budgets[i];
    }
    Allocation {
        target_users: table.target_users().to_vec(),
        budgets,
        total_budget,
        objective: Some(if n == 0 { 0.0 } else { best[total_budget] }),
    }
}

/// Reversed-lexicographic comparison: the later user's budget decides first.
fn prefers(candidate: &[usize], incumbent: &[usize]) -> bool {
    for (c, b) in candidate.iter().rev().zip(incumbent.iter().rev()) {
        if c != b {
            return c < b;
        }
    }
    false
}

/// Exhaustive search over all `(H+1)^n` allocations.
pub fn allocate_bruteforce(table: &UpliftTable, total_budget: usize) -> Result<Allocation> {
    let n = table.n_users();
    let h = table.max_budget();
    let space = (h as u128 + 1)
        .checked_pow(n as u32)
        .unwrap_or(u128::MAX);
    if space > BRUTEFORCE_LIMIT {
        return Err(Error::Capacity(space));
    }
    let mut current = vec![0usize; n];
    let mut best_budgets = current.clone();
    let mut best_value = f64::NEG_INFINITY;
    loop {
        if current.iter().sum::<usize>() <= total_budget {
            let value = current
                .iter()
                .enumerate()
                .fold(0.0, |acc, (k, &t)| acc + table.values()[k][t]);
            if value > best_value || (value == best_value && prefers(&current, &best_budgets)) {
                best_value = value;
                best_budgets.clone_from(&current);
            }
        }
        // odometer increment
        let mut pos = 0;
        while pos < n && current[pos] == h {
            current[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
        current[pos] += 1;
    }
    Ok(Allocation {
        target_users: table.target_users().to_vec(),
        budgets: best_budgets,
        total_budget,
        objective: Some(if n == 0 { 0.0 } else { best_value }),
    })
}

/// `min(H, N / n)` each, remainder one per user in order, never above `H`.
pub fn allocate_uniform(spec: &TargetSpec, total_budget: usize, max_budget: usize) -> Allocation {
    let n = spec.target_users.len();
    let mut budgets = vec![0usize; n];
    if n > 0 {
        let base = (total_budget / n).min(max_budget);
        budgets.fill(base);
        let mut left = total_budget - base * n;
        for t in budgets.iter_mut() {
            if left == 0 {
                break;
            }
            if *t < max_budget {
                *t += 1;
                left -= 1;
            }
        }
    }
    Allocation {
        target_users: spec.target_users.clone(),
        budgets,
        total_budget,
        objective: None,
    }
}

/// Hands out budget units one at a time to uniformly chosen unsaturated users.
pub fn allocate_random(
    spec: &TargetSpec,
    total_budget: usize,
    max_budget: usize,
    seed: u64,
) -> Allocation {
    let n = spec.target_users.len();
    let mut budgets = vec![0usize; n];
    let mut open: Vec<usize> = if max_budget > 0 { (0..n).collect() } else { Vec::new() };
    let mut rng = rng_from(seed);
    let mut left = total_budget;
    while left > 0 && !open.is_empty() {
        let slot = rng.random_range(0..open.len());
        let k = open[slot];
        budgets[k] += 1;
        left -= 1;
        if budgets[k] == max_budget {
            open.swap_remove(slot);
        }
    }
    Allocation {
        target_users: spec.target_users.clone(),
        budgets,
        total_budget,
        objective: None,
    }
}

pub fn allocate(
    kind: AllocatorKind,
    table: &UpliftTable,
    spec: &TargetSpec,
    total_budget: usize,
    seed: u64,
) -> Result<Allocation> {
    let mut alloc = match kind {
        AllocatorKind::Dp => return Ok(allocate_dp(table, total_budget)),
        AllocatorKind::Uniform => allocate_uniform(spec, total_budget, table.max_budget()),
        AllocatorKind::Random => allocate_random(spec, total_budget, table.max_budget(), seed),
    };
    alloc.objective = Some(alloc.objective_on(table)?);
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(values: Vec<Vec<f64>>) -> UpliftTable {
        UpliftTable::manual((0..values.len()).collect(), values).unwrap()
    }

    fn spec(n: usize) -> TargetSpec {
        TargetSpec {
            target_item: 0,
            target_users: (0..n).collect(),
            popularity_mode: None,
            selection_seed: 0,
        }
    }

    #[test]
    fn two_user_examples() {
        // brute force over all 9 allocations of this table:
        // N=2 -> best (0,2)=0.6 ; N=3 -> best (2,1)=0.9
        let t = table(vec![vec![0.0, 0.1, 0.5], vec![0.0, 0.4, 0.6]]);
        let a = allocate_dp(&t, 2);
        assert_eq!(a.budgets, vec![0, 2]);
        assert!((a.objective.unwrap() - 0.6).abs() < 1e-12);
        let a = allocate_dp(&t, 3);
        assert_eq!(a.budgets, vec![2, 1]);
        assert!((a.objective.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(allocate_bruteforce(&t, 3).unwrap().budgets, vec![2, 1]);
        let a = allocate_dp(&t, 0);
        assert_eq!(a.budgets, vec![0, 0]);
        assert_eq!(a.objective, Some(0.0));
    }

    #[test]
    fn zero_budget_keeps_baseline() {
        let t = table(vec![vec![0.2, 0.3], vec![0.1, 0.9]]);
        let a = allocate_dp(&t, 0);
        assert_eq!(a.budgets, vec![0, 0]);
        assert!((a.objective.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_user_argmax() {
        let t = table(vec![vec![0.1, 0.5, 0.3, 0.7]]);
        assert_eq!(allocate_bruteforce(&t, 2).unwrap().budgets, vec![1]);
        assert_eq!(allocate_bruteforce(&t, 5).unwrap().budgets, vec![3]);
        assert_eq!(allocate_dp(&t, 2).budgets, vec![1]);
    }

    #[test]
    fn flat_table_spends_nothing() {
        let t = table(vec![vec![0.25; 4]; 3]);
        for a in [allocate_dp(&t, 6), allocate_bruteforce(&t, 6).unwrap()] {
            assert_eq!(a.budgets, vec![0, 0, 0]);
            assert_eq!(a.objective, Some(0.75));
        }
    }

    #[test]
    fn bruteforce_capacity() {
        let t = table(vec![vec![0.0; 11]; 7]);
        assert!(matches!(allocate_bruteforce(&t, 3), Err(Error::Capacity(_))));
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(allocate_uniform(&spec(50), 100, 6).budgets, vec![2; 50]);
        let a = allocate_uniform(&spec(2), 5, 2);
        assert_eq!(a.budgets, vec![2, 2]);
        assert_eq!(a.spent(), 4);
        assert_eq!(allocate_uniform(&spec(3), 7, 6).budgets, vec![3, 2, 2]);
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let a = allocate_random(&spec(10), 30, 4, 9);
        assert_eq!(a, allocate_random(&spec(10), 30, 4, 9));
        assert_eq!(a.spent(), 30);
        assert!(a.budgets.iter().all(|&t| t <= 4));
        let sat = allocate_random(&spec(3), 30, 4, 9);
        assert_eq!(sat.budgets, vec![4, 4, 4]);
    }

    #[test]
    fn allocation_file_round_trip() {
        let m = InteractionMatrix::from_rows(2, vec![vec![0], vec![1], vec![0, 1]]).unwrap();
        let a = Allocation {
            target_users: vec![0, 2],
            budgets: vec![3, 1],
            total_budget: 4,
            objective: Some(0.75),
        };
        let mut buf = Vec::new();
        a.write(&m, ',', &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "# P_max=0.75 N=4\nu0,3\nu2,1\n");
        assert_eq!(Allocation::read(buf.as_slice(), &m, ',').unwrap(), a);
    }

    fn arb_table() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
        (1usize..=6, 1usize..=4, 0usize..=12).prop_flat_map(|(n, h, budget)| {
            (
                proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, h + 1), n),
                Just(budget),
            )
        })
    }

    proptest! {
        #[test]
        fn dp_matches_bruteforce((values, budget) in arb_table()) {
            let t = table(values);
            let dp = allocate_dp(&t, budget);
            let bf = allocate_bruteforce(&t, budget).unwrap();
            prop_assert_eq!(dp.objective, bf.objective);
            dp.validate(t.max_budget()).unwrap();
            bf.validate(t.max_budget()).unwrap();
            prop_assert!((dp.objective_on(&t).unwrap() - dp.objective.unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn objective_monotone_in_budget((values, budget) in arb_table()) {
            let t = table(values);
            let lo = allocate_dp(&t, budget).objective.unwrap();
            let hi = allocate_dp(&t, budget + 1).objective.unwrap();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn dp_dominates_baselines((values, budget) in arb_table(), seed in 0u64..100) {
            let t = table(values);
            let s = spec(t.n_users());
            let dp = allocate_dp(&t, budget).objective.unwrap();
            let uni = allocate(AllocatorKind::Uniform, &t, &s, budget, seed).unwrap();
            let rnd = allocate(AllocatorKind::Random, &t, &s, budget, seed).unwrap();
            prop_assert!(dp >= uni.objective.unwrap());
            prop_assert!(dp >= rnd.objective.unwrap());
        }

        #[test]
        fn argmax_is_scale_free((values, budget) in arb_table(), exp in -4i32..=0) {
            let c = 2f64.powi(exp);
            let scaled: Vec<Vec<f64>> = values.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
            let a = allocate_dp(&table(values), budget);
            let b = allocate_dp(&UpliftTable::manual((0..scaled.len()).collect(), scaled).unwrap(), budget);
            prop_assert_eq!(a.budgets, b.budgets);
        }
    }
}
