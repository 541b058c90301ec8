use std::collections::HashMap;

use super::{InteractionMatrix, RatingLog};
use crate::error::{Error, Result};

pub const DEFAULT_LIKE_THRESHOLD: f64 = 3.0;

/// Maps explicit ratings to binary likes: `rating > like_threshold`.
///
/// Users and items are indexed in order of their first liked record; entities
/// without any like are dropped.
pub fn to_implicit(log: &RatingLog, like_threshold: f64) -> Result<InteractionMatrix> {
    if log.is_empty() {
        return Err(Error::EmptyInput("rating log".into()));
    }
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for r in log.records.iter().filter(|r| r.rating > like_threshold) {
        let u = *user_index.entry(r.user.as_str()).or_insert_with(|| {
            user_ids.push(r.user.clone());
            rows.push(Vec::new());
            user_ids.len() - 1
        });
        let i = *item_index.entry(r.item.as_str()).or_insert_with(|| {
            item_ids.push(r.item.clone());
            item_ids.len() - 1
        });
        rows[u].push(i);
    }
    if rows.is_empty() {
        return Err(Error::EmptyMatrix("implicit mapping"));
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }
    InteractionMatrix::new(item_ids.len(), rows, user_ids, item_ids)
}

/// Iterative k-core: drops users and items with fewer than `k` interactions
/// until every survivor has at least `k`. Survivors keep their relative order.
pub fn kcore_filter(m: &InteractionMatrix, k: usize) -> Result<InteractionMatrix> {
    if k == 0 {
        return Err(Error::Config("k-core threshold must be at least 1".into()));
    }
    let mut user_alive = vec![true; m.n_users()];
    let mut item_alive = vec![true; m.n_items()];
    loop {
        let mut changed = false;
        let mut item_deg = vec![0usize; m.n_items()];
        for (u, row) in m.rows().iter().enumerate() {
            if !user_alive[u] {
                continue;
            }
            let deg = row.iter().filter(|&&i| item_alive[i]).count();
            if deg < k {
                user_alive[u] = false;
                changed = true;
            } else {
                for &i in row.iter().filter(|&&i| item_alive[i]) {
                    item_deg[i] += 1;
                }
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && item_deg[i] < k {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut new_item = vec![usize::MAX; m.n_items()];
    let mut item_ids = Vec::new();
    for i in (0..m.n_items()).filter(|&i| item_alive[i]) {
        new_item[i] = item_ids.len();
        item_ids.push(m.item_ids()[i].clone());
    }
    let mut rows = Vec::new();
    let mut user_ids = Vec::new();
    for u in (0..m.n_users()).filter(|&u| user_alive[u]) {
        rows.push(
            m.row(u)
                .iter()
                .filter(|&&i| item_alive[i])
                .map(|&i| new_item[i])
                .collect::<Vec<_>>(),
        );
        user_ids.push(m.user_ids()[u].clone());
    }
    if rows.is_empty() || item_ids.is_empty() {
        return Err(Error::EmptyMatrix("k-core filtering"));
    }
    InteractionMatrix::new(item_ids.len(), rows, user_ids, item_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Rating;
    use crate::seed::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn log(records: &[(&str, &str, f64)]) -> RatingLog {
        RatingLog::from_records(records.iter().map(|&(u, i, r)| Rating {
            user: u.into(),
            item: i.into(),
            rating: r,
            timestamp: None,
        }))
    }

    #[test]
    fn threshold_is_exclusive() {
        let m = to_implicit(&log(&[("a", "x", 4.0), ("a", "y", 3.0)]), 3.0).unwrap();
        assert_eq!(m.n_items(), 1);
        assert_eq!(m.item_ids(), &["x"]);
    }

    #[test]
    fn all_threes_is_empty() {
        let err = to_implicit(&log(&[("a", "x", 3.0), ("b", "y", 3.0)]), 3.0).unwrap_err();
        assert!(matches!(err, Error::EmptyMatrix(_)));
    }

    #[test]
    fn small_log_rows() {
        let m = to_implicit(
            &log(&[("u1", "i1", 5.0), ("u1", "i2", 2.0), ("u2", "i1", 4.0)]),
            3.0,
        )
        .unwrap();
        assert_eq!(m.n_users(), 2);
        assert_eq!(m.n_items(), 1);
        assert_eq!(m.row(0), &[0]);
        assert_eq!(m.row(1), &[0]);
    }

    #[test]
    fn k1_is_identity() {
        let m = InteractionMatrix::from_rows(4, vec![vec![0, 1], vec![2], vec![3, 0]]).unwrap();
        assert_eq!(kcore_filter(&m, 1).unwrap(), m);
    }

    #[test]
    fn star_graph_collapses() {
        let m = InteractionMatrix::from_rows(5, vec![vec![0, 1, 2, 3, 4]]).unwrap();
        assert!(matches!(kcore_filter(&m, 2).unwrap_err(), Error::EmptyMatrix(_)));
    }

    fn random_matrix(seed: u64, n_users: usize, n_items: usize, p: f64) -> InteractionMatrix {
        let mut rng = rng_from(seed);
        let rows = (0..n_users)
            .map(|_| (0..n_items).filter(|_| rng.random_bool(p)).collect())
            .collect();
        InteractionMatrix::from_rows(n_items, rows).unwrap()
    }

    #[test]
    fn kcore_fixed_point_on_random_matrix() {
        let m = random_matrix(11, 200, 150, 0.03);
        let core = kcore_filter(&m, 3).unwrap();
        assert!(core.rows().iter().all(|r| r.len() >= 3));
        assert!(core.item_degrees().iter().all(|&d| d >= 3));
        assert_eq!(kcore_filter(&core, 3).unwrap(), core);
    }

    proptest! {
        #[test]
        fn implicit_mapping_is_exact(
            records in proptest::collection::vec((0u8..12, 0u8..15, 1u8..=5), 1..300)
        ) {
            let raw: Vec<(String, String, f64)> = records
                .iter()
                .map(|&(u, i, r)| (format!("u{u}"), format!("i{i}"), r as f64))
                .collect();
            let log = RatingLog::from_records(raw.iter().map(|(u, i, r)| Rating {
                user: u.clone(), item: i.clone(), rating: *r, timestamp: None,
            }));
            match to_implicit(&log, 3.0) {
                Ok(m) => {
                    let mut expected: Vec<(String, String)> = log.records.iter()
                        .filter(|r| r.rating > 3.0)
                        .map(|r| (r.user.clone(), r.item.clone()))
                        .collect();
                    expected.sort();
                    let mut got = Vec::new();
                    for u in 0..m.n_users() {
                        for &i in m.row(u) {
                            got.push((m.user_ids()[u].clone(), m.item_ids()[i].clone()));
                        }
                    }
                    got.sort();
                    prop_assert_eq!(got, expected);
                }
                Err(Error::EmptyMatrix(_)) => {
                    prop_assert!(log.records.iter().all(|r| r.rating <= 3.0));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn kcore_is_idempotent(seed in 0u64..1000, k in 1usize..4) {
            let m = random_matrix(seed, 40, 30, 0.12);
            if let Ok(core) = kcore_filter(&m, k) {
                prop_assert!(core.rows().iter().all(|r| r.len() >= k));
                prop_assert!(core.item_degrees().iter().all(|&d| d >= k));
                prop_assert_eq!(kcore_filter(&core, k).unwrap(), core.clone());
                // surviving ids are unique and drawn from the input
                let ids: std::collections::HashSet<_> = core.user_ids().iter().collect();
                prop_assert_eq!(ids.len(), core.n_users());
            }
        }
    }
}
