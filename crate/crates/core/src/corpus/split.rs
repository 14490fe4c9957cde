//! Head/tail traffic split.

use std::collections::{BTreeMap, BTreeSet};

use super::universe::QueryId;
use crate::error::{Error, Result};

/// Head = the smallest prefix of queries, sorted by descending count with
/// ties broken by ascending id, whose cumulative traffic reaches
/// `fraction * total`. Tail = the complement.
pub fn head_tail_split(
    query_traffic: &BTreeMap<QueryId, u64>,
    fraction: f64,
) -> Result<(BTreeSet<QueryId>, BTreeSet<QueryId>)> {
    if query_traffic.is_empty() {
        return Err(Error::EmptyInput("head/tail split of empty traffic".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("fraction", "must be in (0, 1)"));
    }
    let mut entries: Vec<(QueryId, u64)> = query_traffic.iter().map(|(q, c)| (*q, *c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: u64 = entries.iter().map(|(_, c)| c).sum();
    let target = fraction * total as f64;

    let mut head = BTreeSet::new();
    let mut cumulative = 0u64;
    for (q, count) in &entries {
        head.insert(*q);
        cumulative += count;
        if cumulative as f64 >= target {
            break;
        }
    }
    let tail: BTreeSet<QueryId> = entries
        .iter()
        .map(|(q, _)| *q)
        .filter(|q| !head.contains(q))
        .collect();
    Ok((head, tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traffic(pairs: &[(u32, u64)]) -> BTreeMap<QueryId, u64> {
        pairs.iter().map(|(q, c)| (QueryId(*q), *c)).collect()
    }

    #[test]
    fn top_query_covers_half() {
        let counts = traffic(&[(1, 50), (2, 30), (3, 10), (4, 5), (5, 5)]);
        let (head, tail) = head_tail_split(&counts, 0.5).unwrap();
        assert_eq!(head, [QueryId(1)].into_iter().collect());
        assert_eq!(tail.len(), 4);
    }

    #[test]
    fn uniform_counts_tie_break_by_id() {
        let counts = traffic(&[(3, 10), (1, 10), (4, 10), (2, 10)]);
        let (head, _) = head_tail_split(&counts, 0.5).unwrap();
        assert_eq!(head, [QueryId(1), QueryId(2)].into_iter().collect());
    }

    #[test]
    fn fraction_near_one_takes_everything() {
        let counts = traffic(&[(1, 50), (2, 30), (3, 10), (4, 5), (5, 5)]);
        let (head, tail) = head_tail_split(&counts, 0.999_999).unwrap();
        assert_eq!(head.len(), 5);
        assert!(tail.is_empty());
    }

    #[test]
    fn empty_map_is_error() {
        assert!(head_tail_split(&BTreeMap::new(), 0.5).is_err());
    }

    #[test]
    fn bad_fraction_is_error() {
        let counts = traffic(&[(1, 10)]);
        assert!(head_tail_split(&counts, 0.0).is_err());
        assert!(head_tail_split(&counts, 1.0).is_err());
    }
}
