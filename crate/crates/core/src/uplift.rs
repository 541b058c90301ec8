//! Per-user response tables: the probability that the target item enters a
//! target user's top-K list as a function of that user's fake-user budget.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::Allocation;
use crate::attackers::{generate, max_similarity_profiles, AttackerConfig};
use crate::cf::{train, TrainConfig};
use crate::dataset::{InteractionMatrix, TargetSpec};
use crate::error::{Error, Result};
use crate::pathcount::{augmented_path_counts, PathQuery, ProxyParams};
use crate::seed::{derive_seed, sha256_hex};

pub const TABLE_MAGIC: &str = "UBALAB-UT v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorInfo {
    Simulated {
        runs: usize,
        top_k: usize,
        base_seed: u64,
        attacker: AttackerConfig,
        surrogate: TrainConfig,
    },
    Proxy {
        params: ProxyParams,
        normalizer: f64,
        profile_size: usize,
    },
    Manual,
}

/// Rows follow `target_users`; column `t` holds the estimate under budget `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftTable {
    target_users: Vec<usize>,
    max_budget: usize,
    values: Vec<Vec<f64>>,
    info: EstimatorInfo,
}

impl UpliftTable {
    pub fn new(target_users: Vec<usize>, values: Vec<Vec<f64>>, info: EstimatorInfo) -> Result<Self> {
        if target_users.is_empty() {
            return Err(Error::Contract("uplift table needs at least one row".into()));
        }
        if values.len() != target_users.len() {
            return Err(Error::Contract(format!(
                "{} rows for {} target users",
                values.len(),
                target_users.len()
            )));
        }
        let width = values[0].len();
        if width < 1 || values.iter().any(|r| r.len() != width) {
            return Err(Error::Contract("uplift rows must share one width >= 1".into()));
        }
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("uplift entries must lie in [0, 1]".into()));
        }
        Ok(UpliftTable {
            target_users,
            max_budget: width - 1,
            values,
            info,
        })
    }

    /// Table from explicit values, for tests and hand-built scenarios.
    pub fn manual(target_users: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(target_users, values, EstimatorInfo::Manual)
    }

    pub fn target_users(&self) -> &[usize] {
        &self.target_users
    }

    pub fn n_users(&self) -> usize {
        self.target_users.len()
    }

    pub fn max_budget(&self) -> usize {
        self.max_budget
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn info(&self) -> &EstimatorInfo {
        &self.info
    }

    pub fn value(&self, row: usize, t: usize) -> Result<f64> {
        if row >= self.n_users() {
            return Err(Error::Index { kind: "row", index: row, bound: self.n_users() });
        }
        if t > self.max_budget {
            return Err(Error::Index { kind: "budget", index: t, bound: self.max_budget + 1 });
        }
        Ok(self.values[row][t])
    }

    /// `Y[row][t] - Y[row][0]`; may be negative for noisy simulated rows.
    pub fn uplift(&self, row: usize, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::Contract("uplift is defined for budgets >= 1".into()));
        }
        Ok(self.value(row, t)? - self.value(row, 0)?)
    }

    pub fn content_hash(&self) -> String {
        let mut buf = serde_json::to_vec(&self.info).expect("info serializes");
        for &u in &self.target_users {
            buf.extend_from_slice(&(u as u64).to_le_bytes());
        }
        for v in self.values.iter().flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sha256_hex(&buf)
    }

    /// Text snapshot: magic, hash, metadata JSON, shape, then one row per
    /// target user (`index<TAB>values...`).
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = format!(
            "{TABLE_MAGIC}\nhash {}\nmeta {}\nrows {} budget {}\n",
            self.content_hash(),
            serde_json::to_string(&self.info)?,
            self.n_users(),
            self.max_budget
        );
        for (u, row) in self.target_users.iter().zip(&self.values) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{u}\t{}\n", vals.join(" ")));
        }
        out.write_all(s.as_bytes()).map_err(|e| Error::io("<uplift table>", e))
    }

    /// Parses a snapshot and rejects it when the stored hash does not match.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io("<uplift table>", e))?;
        let bad = |line: usize, message: &str| Error::Parse { line, message: message.into() };
        if lines.first().map(String::as_str) != Some(TABLE_MAGIC) {
            return Err(Error::Format(format!("missing {TABLE_MAGIC} header")));
        }
        let hash = lines
            .get(1)
            .and_then(|l| l.strip_prefix("hash "))
            .ok_or_else(|| bad(2, "expected hash line"))?;
        let info: EstimatorInfo = serde_json::from_str(
            lines.get(2).and_then(|l| l.strip_prefix("meta ")).ok_or_else(|| bad(3, "expected meta line"))?,
        )?;
        let shape: Vec<&str> = lines.get(3).map(|l| l.split_whitespace().collect()).unwrap_or_default();
        let (n, h) = match shape.as_slice() {
            ["rows", n, "budget", h] => (
                n.parse::<usize>().map_err(|_| bad(4, "bad row count"))?,
                h.parse::<usize>().map_err(|_| bad(4, "bad budget"))?,
            ),
            _ => return Err(bad(4, "expected shape line")),
        };
        if lines.len() != 4 + n {
            return Err(Error::Format(format!("expected {n} rows, found {}", lines.len() - 4)));
        }
        let mut users = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for (k, line) in lines[4..].iter().enumerate() {
            let (u, rest) = line.split_once('\t').ok_or_else(|| bad(5 + k, "expected tab"))?;
            users.push(u.parse::<usize>().map_err(|_| bad(5 + k, "bad user index"))?);
            let row = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(5 + k, "bad value")))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != h + 1 {
                return Err(bad(5 + k, "wrong number of values"));
            }
            values.push(row);
        }
        let table = UpliftTable::new(users, values, info)?;
        if table.content_hash() != hash {
            return Err(Error::Format("uplift table hash mismatch".into()));
        }
        Ok(table)
    }

    /// Plot data: one `user<sep>budget<sep>value` line per cell.
    pub fn write_plot_data<W: Write>(&self, m: &InteractionMatrix, sep: char, mut out: W) -> Result<()> {
        let mut s = format!("user{sep}budget{sep}value\n");
        for (&u, row) in self.target_users.iter().zip(&self.values) {
            let id = m.user_ids().get(u).ok_or(Error::Index {
                kind: "user",
                index: u,
                bound: m.n_users(),
            })?;
            for (t, v) in row.iter().enumerate() {
                s.push_str(&format!("{id}{sep}{t}{sep}{v}\n"));
            }
        }
        out.write_all(s.as_bytes()).map_err(|e| Error::io("<uplift plot>", e))
    }
}

/// Simulation settings for [`estimate_simulated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub max_budget: usize,
    pub runs: usize,
    pub top_k: usize,
    pub base_seed: u64,
}

fn top_k_hits(
    m: &InteractionMatrix,
    spec: &TargetSpec,
    attacker: &AttackerConfig,
    surrogate: &TrainConfig,
    top_k: usize,
    t: usize,
    run: usize,
    base_seed: u64,
) -> Result<Vec<bool>> {
    let cell = [t as u64, run as u64];
    let poisoned = if t == 0 {
        m.clone()
    } else {
        let alloc = Allocation {
            target_users: spec.target_users.clone(),
            budgets: vec![t; spec.target_users.len()],
            total_budget: t * spec.target_users.len(),
            objective: None,
        };
        let attacker = attacker.with_seed(derive_seed(base_seed, "uplift-attack", &cell));
        generate(&attacker, &alloc, spec, m)?.stack_onto(m)?
    };
    let model = train(&poisoned, &surrogate.with_seed(derive_seed(base_seed, "uplift-train", &cell)))?;
    spec.target_users
        .iter()
        .map(|&u| {
            let rank = model.rank_of(u, spec.target_item, m.row(u))?;
            Ok(rank.is_some_and(|r| r <= top_k))
        })
        .collect()
}

/// Repeated-simulation estimate: every probe gives all target users budget
/// `t`, trains a fresh surrogate and records whether the target item lands in
/// each user's top-K. Entries are hit counts divided by `runs`.
pub fn estimate_simulated(
    accessible: &InteractionMatrix,
    spec: &TargetSpec,
    attacker: &AttackerConfig,
    surrogate: &TrainConfig,
    sim: &SimulationConfig,
) -> Result<UpliftTable> {
    if sim.runs == 0 || sim.top_k == 0 {
        return Err(Error::Config("simulation needs runs >= 1 and K >= 1".into()));
    }
    spec.validate(accessible)?;
    surrogate.validate()?;
    let grid: Vec<(usize, usize)> = (0..=sim.max_budget)
        .flat_map(|t| (0..sim.runs).map(move |e| (t, e)))
        .collect();
    let hits: Vec<Vec<bool>> = grid
        .par_iter()
        .map(|&(t, e)| {
            top_k_hits(accessible, spec, attacker, surrogate, sim.top_k, t, e, sim.base_seed).map_err(
                |source| Error::Simulation { budget: t, run: e, source: Box::new(source) },
            )
        })
        .collect::<Result<_>>()?;

    let n = spec.target_users.len();
    let mut values = vec![vec![0.0; sim.max_budget + 1]; n];
    for (&(t, _), cell) in grid.iter().zip(&hits) {
        for (k, &hit) in cell.iter().enumerate() {
            if hit {
                values[k][t] += 1.0;
            }
        }
    }
    for v in values.iter_mut().flatten() {
        *v /= sim.runs as f64;
    }
    UpliftTable::new(
        spec.target_users.clone(),
        values,
        EstimatorInfo::Simulated {
            runs: sim.runs,
            top_k: sim.top_k,
            base_seed: sim.base_seed,
            attacker: attacker.clone(),
            surrogate: surrogate.clone(),
        },
    )
}

/// Training-free estimate from three-step walk counts after adding `t`
/// maximally similar fake users per target user.
pub fn estimate_proxy(
    accessible: &InteractionMatrix,
    spec: &TargetSpec,
    max_budget: usize,
    params: &ProxyParams,
    profile_size: usize,
) -> Result<UpliftTable> {
    params.validate()?;
    spec.validate(accessible)?;
    let query = |u: usize| PathQuery::new(vec![(u, spec.target_item)]);
    let counts: Vec<Vec<u128>> = spec
        .target_users
        .par_iter()
        .map(|&u| {
            (0..=max_budget)
                .map(|t| {
                    let fakes = max_similarity_profiles(u, t, spec, accessible, profile_size)?;
                    Ok(augmented_path_counts(accessible, &fakes, &query(u))?[0])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let peak = counts.iter().flatten().map(|&c| params.raw(c)).fold(0.0, f64::max);
    let normalizer = if peak > 0.0 { peak } else { 1.0 };
    let values = counts
        .iter()
        .map(|row| row.iter().map(|&c| (params.raw(c) / normalizer).min(1.0)).collect())
        .collect();
    UpliftTable::new(
        spec.target_users.clone(),
        values,
        EstimatorInfo::Proxy { params: *params, normalizer, profile_size },
    )
}
