//! Rating ingestion, implicit interaction matrices and target selection.

mod filter;
mod io;
mod select;
mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub use filter::{kcore_filter, to_implicit, DEFAULT_LIKE_THRESHOLD};
pub use io::{
    load_categories, load_ratings, parse_categories, parse_ratings, read_matrix, write_matrix,
    DelimitedFormat, MATRIX_MAGIC,
};
pub use select::{select_target_items, select_target_users, split_accessible, PopularityMode};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Raw explicit feedback, one record per distinct (user, item) pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingLog {
    pub records: Vec<Rating>,
}

impl RatingLog {
    /// Builds a log from raw records. A repeated (user, item) pair keeps the
    /// position of its first occurrence and the value of its last.
    pub fn from_records(raw: impl IntoIterator<Item = Rating>) -> Self {
        let mut slot: HashMap<(String, String), usize> = HashMap::new();
        let mut records: Vec<Rating> = Vec::new();
        for r in raw {
            let key = (r.user.clone(), r.item.clone());
            match slot.get(&key) {
                Some(&pos) => records[pos] = r,
                None => {
                    slot.insert(key, records.len());
                    records.push(r);
                }
            }
        }
        RatingLog { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Sparse binary user x item matrix with dense indices and external id maps.
///
/// Rows hold the liked item indices of each user, sorted and duplicate free.
/// The symmetric bipartite adjacency `[[0, D], [D^T, 0]]` is fully determined
/// by the rows, so it is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    n_items: usize,
    rows: Vec<Vec<usize>>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl InteractionMatrix {
    pub fn new(
        n_items: usize,
        rows: Vec<Vec<usize>>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if user_ids.len() != rows.len() {
            return Err(Error::Contract(format!(
                "{} user ids for {} rows",
                user_ids.len(),
                rows.len()
            )));
        }
        if item_ids.len() != n_items {
            return Err(Error::Contract(format!(
                "{} item ids for {} items",
                item_ids.len(),
                n_items
            )));
        }
        for (u, row) in rows.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("row {u} is not sorted and unique")));
            }
            if let Some(&i) = row.last() {
                if i >= n_items {
                    return Err(Error::Index {
                        kind: "item",
                        index: i,
                        bound: n_items,
                    });
                }
            }
        }
        Ok(InteractionMatrix {
            n_items,
            rows,
            user_ids,
            item_ids,
        })
    }

    /// Builds a matrix with generated ids (`u0, u1, ...`, `i0, i1, ...`).
    /// Rows are sorted and deduplicated.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let rows: Vec<Vec<usize>> = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        let user_ids = (0..rows.len()).map(|u| format!("u{u}")).collect();
        let item_ids = (0..n_items).map(|i| format!("i{i}")).collect();
        Self::new(n_items, rows, user_ids, item_ids)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nnz() == 0
    }

    pub fn row(&self, u: usize) -> &[usize] {
        &self.rows[u]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, external: &str) -> Option<usize> {
        self.user_ids.iter().position(|id| id == external)
    }

    pub fn likes(&self, u: usize, i: usize) -> bool {
        self.rows[u].binary_search(&i).is_ok()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_items];
        for row in &self.rows {
            for &i in row {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Transpose: for each item the ascending list of users who liked it.
    pub fn item_users(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.n_items];
        for (u, row) in self.rows.iter().enumerate() {
            for &i in row {
                cols[i].push(u);
            }
        }
        cols
    }

    /// Item indices ordered by descending interaction count, ties by index.
    pub fn items_by_popularity(&self) -> Vec<usize> {
        let deg = self.item_degrees();
        let mut items: Vec<usize> = (0..self.n_items).collect();
        items.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
        items
    }

    pub fn mean_row_len(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.nnz() as f64 / self.rows.len() as f64
    }

    /// Returns a copy with extra users appended, ids `<prefix><k>`.
    pub fn with_appended_users(&self, rows: &[Vec<usize>], id_prefix: &str) -> Result<Self> {
        let mut all_rows = self.rows.clone();
        let mut user_ids = self.user_ids.clone();
        for (k, row) in rows.iter().enumerate() {
            let mut r = row.clone();
            r.sort_unstable();
            r.dedup();
            all_rows.push(r);
            user_ids.push(format!("{id_prefix}{k}"));
        }
        Self::new(self.n_items, all_rows, user_ids, self.item_ids.clone())
    }

    /// Sub-matrix over the given users (kept in the given order); the item
    /// index space is unchanged.
    pub fn select_users(&self, users: &[usize]) -> Self {
        InteractionMatrix {
            n_items: self.n_items,
            rows: users.iter().map(|&u| self.rows[u].clone()).collect(),
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            item_ids: self.item_ids.clone(),
        }
    }

    /// Content hash over ids and rows.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::with_capacity(self.nnz() * 4 + 64);
        buf.extend_from_slice(&(self.n_items as u64).to_le_bytes());
        buf.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for id in self.user_ids.iter().chain(&self.item_ids) {
            buf.extend_from_slice(id.as_bytes());
            buf.push(0);
        }
        for row in &self.rows {
            buf.extend_from_slice(&(row.len() as u64).to_le_bytes());
            for &i in row {
                buf.extend_from_slice(&(i as u64).to_le_bytes());
            }
        }
        sha256_hex(&buf)
    }
}

/// Item index to category labels. Items may carry several labels or none.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCategoryMap {
    categories: Vec<Vec<String>>,
}

impl ItemCategoryMap {
    pub fn new(n_items: usize) -> Self {
        ItemCategoryMap {
            categories: vec![Vec::new(); n_items],
        }
    }

    pub fn assign(&mut self, item: usize, category: impl Into<String>) -> Result<()> {
        let n = self.categories.len();
        let slot = self.categories.get_mut(item).ok_or(Error::Index {
            kind: "item",
            index: item,
            bound: n,
        })?;
        let category = category.into();
        if !slot.contains(&category) {
            slot.push(category);
        }
        Ok(())
    }

    pub fn categories_of(&self, item: usize) -> &[String] {
        self.categories.get(item).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn n_items(&self) -> usize {
        self.categories.len()
    }
}

/// The attacked item and the user group it should be promoted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target_item: usize,
    pub target_users: Vec<usize>,
    pub popularity_mode: Option<PopularityMode>,
    pub selection_seed: u64,
}

impl TargetSpec {
    pub fn validate(&self, m: &InteractionMatrix) -> Result<()> {
        if self.target_item >= m.n_items() {
            return Err(Error::Index {
                kind: "item",
                index: self.target_item,
                bound: m.n_items(),
            });
        }
        if self.target_users.is_empty() {
            return Err(Error::Contract("target user group is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &u in &self.target_users {
            if u >= m.n_users() {
                return Err(Error::Index {
                    kind: "user",
                    index: u,
                    bound: m.n_users(),
                });
            }
            if !seen.insert(u) {
                return Err(Error::Contract(format!("target user {u} listed twice")));
            }
            if m.likes(u, self.target_item) {
                return Err(Error::Contract(format!(
                    "target user {u} already likes the target item"
                )));
            }
        }
        Ok(())
    }

    /// Re-expresses the target users in the index space of `to`, matching by
    /// external user id.
    pub fn remap(&self, from: &InteractionMatrix, to: &InteractionMatrix) -> Result<TargetSpec> {
        let lookup: HashMap<&str, usize> = to
            .user_ids()
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k))
            .collect();
        let target_users = self
            .target_users
            .iter()
            .map(|&u| {
                let id = &from.user_ids()[u];
                lookup.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Contract(format!("target user {id} missing from remapped matrix"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TargetSpec {
            target_users,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_sorts_and_dedups() {
        let m = InteractionMatrix::from_rows(4, vec![vec![3, 1, 1], vec![]]).unwrap();
        assert_eq!(m.row(0), &[1, 3]);
        assert_eq!(m.nnz(), 2);
        assert!(m.likes(0, 3));
        assert!(!m.likes(1, 3));
    }

    #[test]
    fn new_rejects_out_of_range_items() {
        let err = InteractionMatrix::from_rows(2, vec![vec![0, 2]]).unwrap_err();
        assert!(matches!(err, Error::Index { index: 2, .. }));
    }

    #[test]
    fn popularity_order_breaks_ties_by_index() {
        let m = InteractionMatrix::from_rows(4, vec![vec![1, 2], vec![2, 3], vec![1]]).unwrap();
        assert_eq!(m.items_by_popularity(), vec![1, 2, 3, 0]);
    }

    #[test]
    fn dedup_keeps_last_value_first_position() {
        let r = |u: &str, i: &str, v: f64| Rating {
            user: u.into(),
            item: i.into(),
            rating: v,
            timestamp: None,
        };
        let log = RatingLog::from_records(vec![r("a", "x", 4.0), r("b", "x", 1.0), r("a", "x", 2.0)]);
        assert_eq!(log.len(), 2);
        assert_eq!(log.records[0].rating, 2.0);
        assert_eq!(log.records[1].user, "b");
    }

    #[test]
    fn remap_follows_external_ids() {
        let m = InteractionMatrix::from_rows(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let sub = m.select_users(&[2, 0]);
        let spec = TargetSpec {
            target_item: 1,
            target_users: vec![0, 2],
            popularity_mode: None,
            selection_seed: 0,
        };
        let remapped = spec.remap(&m, &sub).unwrap();
        assert_eq!(remapped.target_users, vec![1, 0]);
    }

    #[test]
    fn fingerprint_changes_with_content() {
        let a = InteractionMatrix::from_rows(3, vec![vec![0], vec![1]]).unwrap();
        let b = InteractionMatrix::from_rows(3, vec![vec![0], vec![2]]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
