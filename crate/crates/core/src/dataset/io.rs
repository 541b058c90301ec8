use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InteractionMatrix, ItemCategoryMap, Rating, RatingLog};
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &str = "UBALAB-IM v1";

/// Layout of a delimited text input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelimitedFormat {
    pub separator: char,
    pub skip_header: bool,
}

impl Default for DelimitedFormat {
    fn default() -> Self {
        DelimitedFormat {
            separator: ',',
            skip_header: false,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Lines that carry data: (1-based line number, trimmed text).
fn data_lines<R: BufRead>(
    reader: R,
    fmt: &DelimitedFormat,
) -> impl Iterator<Item = Result<(usize, String)>> {
    let skip = usize::from(fmt.skip_header);
    reader
        .lines()
        .enumerate()
        .skip(skip)
        .filter_map(|(n, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((n + 1, l.trim().to_string()))),
            Err(e) => Some(Err(Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })),
        })
}

pub fn parse_ratings<R: BufRead>(reader: R, fmt: &DelimitedFormat) -> Result<RatingLog> {
    let mut raw = Vec::new();
    for entry in data_lines(reader, fmt) {
        let (line, text) = entry?;
        let fields: Vec<&str> = text.split(fmt.separator).map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty user or item id".into(),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad rating `{}`", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line,
                message: "rating is not finite".into(),
            });
        }
        let timestamp = match fields.get(3) {
            Some(ts) => Some(ts.parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad timestamp `{ts}`"),
            })?),
            None => None,
        };
        raw.push(Rating {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("no rating records".into()));
    }
    Ok(RatingLog::from_records(raw))
}

pub fn load_ratings(path: impl AsRef<Path>, fmt: &DelimitedFormat) -> Result<RatingLog> {
    parse_ratings(open(path.as_ref())?, fmt)
}

/// Reads `item_id<sep>category` lines. Items absent from `m` are skipped (they
/// did not survive filtering).
pub fn parse_categories<R: BufRead>(
    reader: R,
    fmt: &DelimitedFormat,
    m: &InteractionMatrix,
) -> Result<ItemCategoryMap> {
    let index: HashMap<&str, usize> = m
        .item_ids()
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let mut map = ItemCategoryMap::new(m.n_items());
    for entry in data_lines(reader, fmt) {
        let (line, text) = entry?;
        let mut parts = text.splitn(2, fmt.separator).map(str::trim);
        let (item, cat) = match (parts.next(), parts.next()) {
            (Some(i), Some(c)) if !i.is_empty() && !c.is_empty() => (i, c),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "expected item_id and category".into(),
                })
            }
        };
        if let Some(&k) = index.get(item) {
            map.assign(k, cat)?;
        }
    }
    Ok(map)
}

pub fn load_categories(
    path: impl AsRef<Path>,
    fmt: &DelimitedFormat,
    m: &InteractionMatrix,
) -> Result<ItemCategoryMap> {
    parse_categories(open(path.as_ref())?, fmt, m)
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("id `{id}` cannot be stored")));
    }
    Ok(())
}

/// Writes the text snapshot:
///
/// ```text
/// UBALAB-IM v1
/// users <n_users> items <n_items>
/// <item id>                         (n_items lines, index order)
/// <user id>\t<item> <item> ...      (n_users lines, index order)
/// ```
pub fn write_matrix<W: Write>(m: &InteractionMatrix, mut out: W) -> Result<()> {
    let mut s = String::with_capacity(m.nnz() * 6 + 64);
    s.push_str(MATRIX_MAGIC);
    s.push('\n');
    s.push_str(&format!("users {} items {}\n", m.n_users(), m.n_items()));
    for id in m.item_ids() {
        check_id(id)?;
        s.push_str(id);
        s.push('\n');
    }
    for (u, id) in m.user_ids().iter().enumerate() {
        check_id(id)?;
        s.push_str(id);
        s.push('\t');
        let items: Vec<String> = m.row(u).iter().map(usize::to_string).collect();
        s.push_str(&items.join(" "));
        s.push('\n');
    }
    out.write_all(s.as_bytes())
        .map_err(|e| Error::io("<matrix snapshot>", e))
}

pub fn read_matrix<R: BufRead>(reader: R) -> Result<InteractionMatrix> {
    let mut lines = reader.lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Format(e.to_string())),
            None => Err(Error::Format(format!("truncated snapshot, expected {what}"))),
        }
    };
    if next("magic")?.trim_end() != MATRIX_MAGIC {
        return Err(Error::Format(format!("missing `{MATRIX_MAGIC}` header")));
    }
    let dims = next("dimensions")?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let (n_users, n_items) = match parts.as_slice() {
        ["users", u, "items", i] => (
            u.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?,
            i.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?,
        ),
        _ => return Err(Error::Format(format!("bad dimension line `{dims}`"))),
    };
    let mut item_ids = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        item_ids.push(next("item id")?);
    }
    let mut user_ids = Vec::with_capacity(n_users);
    let mut rows = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let line = next("user row")?;
        let (id, items) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("bad user row `{line}`")))?;
        let row = items
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        user_ids.push(id.to_string());
        rows.push(row);
    }
    InteractionMatrix::new(n_items, rows, user_ids, item_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RatingLog> {
        parse_ratings(text.as_bytes(), &DelimitedFormat::default())
    }

    #[test]
    fn duplicate_pair_collapses_to_last() {
        let log = parse("u1,i1,4\nu1,i1,2\n").unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.records[0].rating, 2.0);
    }

    #[test]
    fn three_valid_lines() {
        let log = parse("u1,i1,4\nu2,i1,5,1000\nu1,i2,1\n").unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.records[1].timestamp, Some(1000));
    }

    #[test]
    fn malformed_rating_reports_line() {
        let err = parse("u1,i1,4\nu1,i1,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse("").unwrap_err(), Error::EmptyInput(_)));
        assert!(matches!(parse("\n  \n").unwrap_err(), Error::EmptyInput(_)));
    }

    #[test]
    fn header_and_custom_separator() {
        let fmt = DelimitedFormat {
            separator: '\t',
            skip_header: true,
        };
        let log = parse_ratings("user\titem\trating\na\tb\t5\n".as_bytes(), &fmt).unwrap();
        assert_eq!(log.records[0].item, "b");
    }

    #[test]
    fn categories_skip_unknown_items() {
        let m = InteractionMatrix::from_rows(2, vec![vec![0, 1]]).unwrap();
        let cats = parse_categories(
            "i0,action\ni0,drama\nzz,comedy\ni1,drama\n".as_bytes(),
            &DelimitedFormat::default(),
            &m,
        )
        .unwrap();
        assert_eq!(cats.categories_of(0), &["action", "drama"]);
        assert_eq!(cats.categories_of(1), &["drama"]);
    }

    #[test]
    fn snapshot_round_trip() {
        let m = InteractionMatrix::from_rows(5, vec![vec![0, 4], vec![], vec![2]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert!(buf.starts_with(MATRIX_MAGIC.as_bytes()));
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn snapshot_rejects_wrong_magic() {
        assert!(matches!(
            read_matrix("UBALAB-IM v2\n".as_bytes()).unwrap_err(),
            Error::Format(_)
        ));
    }
}
