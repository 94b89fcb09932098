//! Conjunctive intersection of sorted posting lists.
//!
//! Lists are intersected shortest-first. Each surviving candidate is located
//! in the next list by galloping (exponential probe, then binary search)
//! forward from the previous match, so a pass costs `O(small * log(large /
//! small))` comparisons and never more than a linear merge.

use crate::corpus::PostId;

/// Comparison counter used to verify the cost bound.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct IntersectStats {
    pub comparisons: usize,
}

pub fn intersect(lists: &[&[PostId]], stats: &mut IntersectStats) -> Vec<PostId> {
    if lists.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<&[PostId]> = lists.to_vec();
    order.sort_by_key(|l| l.len());
    let mut acc = order[0].to_vec();
    for list in &order[1..] {
        if acc.is_empty() {
            break;
        }
        acc = intersect_pair(&acc, list, stats);
    }
    acc
}

fn intersect_pair(small: &[PostId], large: &[PostId], stats: &mut IntersectStats) -> Vec<PostId> {
    let mut out = Vec::with_capacity(small.len());
    let mut lo = 0;
    for &x in small {
        if lo >= large.len() {
            break;
        }
        lo = gallop(large, lo, x, stats);
        if lo < large.len() {
            stats.comparisons += 1;
            if large[lo] == x {
                out.push(x);
                lo += 1;
            }
        }
    }
    out
}

/// First index `>= from` with `list[i] >= target`, or `list.len()`.
fn gallop(list: &[PostId], from: usize, target: PostId, stats: &mut IntersectStats) -> usize {
    let mut step = 1;
    let mut prev = from;
    let mut probe = from;
    loop {
        if probe >= list.len() {
            probe = list.len();
            break;
        }
        stats.comparisons += 1;
        if list[probe] >= target {
            break;
        }
        prev = probe + 1;
        probe = from + step;
        step *= 2;
    }
    // Answer lies in [prev, probe].
    let (mut lo, mut hi) = (prev, probe);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        stats.comparisons += 1;
        if list[mid] < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ids(v: &[u64]) -> Vec<PostId> {
        v.iter().copied().map(PostId).collect()
    }

    #[test]
    fn basic_intersection() {
        let a = ids(&[1, 2, 3]);
        let b = ids(&[2, 3, 4]);
        let mut s = IntersectStats::default();
        assert_eq!(intersect(&[&a, &b], &mut s), ids(&[2, 3]));
        assert_eq!(intersect(&[&a], &mut s), a);
        assert!(intersect(&[&a, &[]], &mut s).is_empty());
        assert!(intersect(&[], &mut s).is_empty());
    }

    #[test]
    fn cost_is_linear_in_total_length_on_adversarial_inputs() {
        // Interleaved lists defeat galloping; equal lists force full scans.
        let evens: Vec<PostId> = (0..20_000).map(|i| PostId(2 * i)).collect();
        let odds: Vec<PostId> = (0..20_000).map(|i| PostId(2 * i + 1)).collect();
        let all: Vec<PostId> = (0..40_000).map(PostId).collect();
        let cases: Vec<Vec<&[PostId]>> = vec![
            vec![&evens, &odds],
            vec![&evens, &all],
            vec![&all, &all, &all],
            vec![&odds, &evens, &all],
        ];
        for lists in cases {
            let total: usize = lists.iter().map(|l| l.len()).sum();
            let mut s = IntersectStats::default();
            intersect(&lists, &mut s);
            assert!(s.comparisons <= 4 * total, "{} > 4 * {total}", s.comparisons);
        }
    }

    #[test]
    fn skewed_lists_are_sublinear_in_the_long_list() {
        let long: Vec<PostId> = (0..1_000_000).map(PostId).collect();
        let short = ids(&[5, 70_000, 300_000, 999_999]);
        let mut s = IntersectStats::default();
        assert_eq!(intersect(&[&long, &short], &mut s), short);
        assert!(s.comparisons < 200, "{}", s.comparisons);
    }

    proptest! {
        #[test]
        fn matches_set_intersection(
            lists in proptest::collection::vec(
                proptest::collection::btree_set(0u64..300, 0..120), 1..5)
        ) {
            let owned: Vec<Vec<PostId>> = lists.iter().map(|s| s.iter().copied().map(PostId).collect()).collect();
            let refs: Vec<&[PostId]> = owned.iter().map(Vec::as_slice).collect();
            let mut expected: BTreeSet<u64> = lists[0].clone();
            for s in &lists[1..] {
                expected = expected.intersection(s).copied().collect();
            }
            let mut stats = IntersectStats::default();
            let got = intersect(&refs, &mut stats);
            prop_assert_eq!(got, expected.into_iter().map(PostId).collect::<Vec<_>>());
            let total: usize = owned.iter().map(Vec::len).sum();
            prop_assert!(stats.comparisons <= 4 * total + 4);
        }
    }
}
