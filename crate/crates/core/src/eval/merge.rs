//! Merging per-language ranked lists into one multilingual list.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::retrieval::{RankedEntry, RankedList};
use crate::tensor::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeStrategy {
    RoundRobin,
    Score,
}

impl FromStr for MergeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rr" | "round-robin" => Ok(Self::RoundRobin),
            "score" => Ok(Self::Score),
            _ => Err(Error::Config(format!(
                "unknown merge strategy `{s}` (expected rr or score)"
            ))),
        }
    }
}

fn check_inputs(lists: &[RankedList]) -> Result<String> {
    let first = lists
        .first()
        .ok_or_else(|| Error::Contract("nothing to merge".into()))?;
    if let Some(l) = lists.iter().find(|l| l.query_id != first.query_id) {
        return Err(Error::Contract(format!(
            "cannot merge lists for different queries ({} and {})",
            first.query_id, l.query_id
        )));
    }
    let mut seen = HashSet::new();
    for e in lists.iter().flat_map(|l| &l.entries) {
        if !seen.insert(e.doc_id.as_str()) {
            return Err(Error::Conflict(format!(
                "document `{}` appears in more than one list for query {}",
                e.doc_id, first.query_id
            )));
        }
    }
    Ok(first.query_id.clone())
}

/// Round-robin merge where `draw(round, active)` returns the order in which
/// the still-active lists (indices into `lists`) give up their next
/// document in that round. Merged scores are `1/rank`.
pub fn merge_round_robin_with<F>(lists: &[RankedList], mut draw: F) -> Result<RankedList>
where
    F: FnMut(usize, &[usize]) -> Vec<usize>,
{
    let qid = check_inputs(lists)?;
    let mut cursor = vec![0usize; lists.len()];
    let mut out = RankedList::new(qid);
    for round in 0.. {
        let active: Vec<usize> = (0..lists.len()).filter(|&i| cursor[i] < lists[i].len()).collect();
        if active.is_empty() {
            break;
        }
        let order = draw(round, &active);
        let mut check = order.clone();
        check.sort_unstable();
        if check != active {
            return Err(Error::Contract(format!(
                "round {round} draw {order:?} is not a permutation of {active:?}"
            )));
        }
        for i in order {
            out.entries.push(lists[i].entries[cursor[i]].clone());
            cursor[i] += 1;
        }
    }
    for (rank, e) in out.entries.iter_mut().enumerate() {
        e.score = 1.0 / (rank + 1) as f64;
    }
    Ok(out)
}

/// Round-robin merge with per-round random list order drawn from a stream
/// seeded by `(seed, query id)`.
pub fn merge_round_robin(lists: &[RankedList], seed: u64) -> Result<RankedList> {
    let qid = lists.first().map(|l| l.query_id.clone()).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("merge/{qid}")));
    merge_round_robin_with(lists, |_, active| {
        let mut order = active.to_vec();
        order.shuffle(&mut rng);
        order
    })
}

/// Min-max normalizes each list to [0, 1] (a constant list becomes 0.5) and
/// sorts the union by normalized score, ties by doc id.
pub fn merge_by_score(lists: &[RankedList]) -> Result<RankedList> {
    let qid = check_inputs(lists)?;
    let mut out = RankedList::new(qid);
    for l in lists {
        let lo = l.entries.iter().map(|e| e.score).fold(f64::INFINITY, f64::min);
        let hi = l.entries.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max);
        for e in &l.entries {
            let score = if hi > lo { (e.score - lo) / (hi - lo) } else { 0.5 };
            out.entries.push(RankedEntry { score, ..e.clone() });
        }
    }
    out.sort();
    Ok(out)
}

/// Merges whole runs query by query. A query missing from some runs is
/// merged from the runs that have it.
pub fn merge_runs(runs: &[Vec<RankedList>], strategy: MergeStrategy, seed: u64) -> Result<Vec<RankedList>> {
    let mut by_qid: BTreeMap<&str, Vec<RankedList>> = BTreeMap::new();
    for run in runs {
        let mut seen = HashSet::new();
        for l in run {
            if !seen.insert(l.query_id.as_str()) {
                return Err(Error::Conflict(format!(
                    "query `{}` appears twice in one run",
                    l.query_id
                )));
            }
            by_qid.entry(&l.query_id).or_default().push(l.clone());
        }
    }
    by_qid
        .values()
        .map(|lists| match strategy {
            MergeStrategy::RoundRobin => merge_round_robin(lists, seed),
            MergeStrategy::Score => merge_by_score(lists),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(qid: &str, docs: &[(&str, f64)]) -> RankedList {
        RankedList {
            query_id: qid.into(),
            entries: docs
                .iter()
                .map(|&(d, s)| RankedEntry {
                    doc_id: d.into(),
                    score: s,
                    lang: String::new(),
                })
                .collect(),
        }
    }

    fn ids(l: &RankedList) -> Vec<&str> {
        l.doc_ids().collect()
    }

    #[test]
    fn round_robin_follows_the_draws() {
        let l1 = list("q", &[("a1", 0.9), ("a2", 0.8)]);
        let l2 = list("q", &[("b1", 0.7)]);
        let draws = [vec![0, 1], vec![0]];
        let m = merge_round_robin_with(&[l1, l2], |r, _| draws[r].clone()).unwrap();
        assert_eq!(ids(&m), ["a1", "b1", "a2"]);
        let scores: Vec<f64> = m.entries.iter().map(|e| e.score).collect();
        assert_eq!(scores, [1.0, 0.5, 1.0 / 3.0]);
    }

    #[test]
    fn round_robin_single_list_and_determinism() {
        let l1 = list("q", &[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        assert_eq!(ids(&merge_round_robin(&[l1.clone()], 5).unwrap()), ["a", "b", "c"]);
        let l2 = list("q", &[("x", 1.0), ("y", 0.0)]);
        let a = merge_round_robin(&[l1.clone(), l2.clone()], 9).unwrap();
        assert_eq!(a, merge_round_robin(&[l1, l2], 9).unwrap());
    }

    #[test]
    fn duplicates_across_lists_conflict() {
        let l1 = list("q", &[("a", 1.0)]);
        let l2 = list("q", &[("a", 0.5)]);
        assert!(matches!(
            merge_by_score(&[l1.clone(), l2.clone()]),
            Err(Error::Conflict(_))
        ));
        assert!(matches!(merge_round_robin(&[l1, l2], 0), Err(Error::Conflict(_))));
    }

    #[test]
    fn score_merge_examples() {
        let m = merge_by_score(&[list("q", &[("a", 6.0), ("b", 4.0), ("c", 2.0)])]).unwrap();
        let got: Vec<(&str, f64)> = m.entries.iter().map(|e| (e.doc_id.as_str(), e.score)).collect();
        assert_eq!(got, [("a", 1.0), ("b", 0.5), ("c", 0.0)]);

        let m = merge_by_score(&[list("q", &[("p", 1.0)]), list("q", &[("s1", 0.9), ("s2", 0.1)])]).unwrap();
        assert_eq!(ids(&m), ["s1", "p", "s2"]);
    }

    proptest! {
        #[test]
        fn round_robin_preserves_within_list_order(lens in prop::collection::vec(0usize..20, 1..5), seed in any::<u64>()) {
            let lists: Vec<RankedList> = lens
                .iter()
                .enumerate()
                .map(|(k, &n)| RankedList {
                    query_id: "q".into(),
                    entries: (0..n)
                        .map(|i| RankedEntry { doc_id: format!("{k}-{i:02}"), score: -(i as f64), lang: String::new() })
                        .collect(),
                })
                .collect();
            let m = merge_round_robin(&lists, seed).unwrap();
            prop_assert_eq!(m.len(), lens.iter().sum::<usize>());
            for (k, l) in lists.iter().enumerate() {
                let prefix = format!("{k}-");
                let sub: Vec<&str> = m.doc_ids().filter(|d| d.starts_with(&prefix)).collect();
                prop_assert_eq!(sub, l.doc_ids().collect::<Vec<_>>());
            }
        }

        #[test]
        fn score_merge_is_a_permutation(scores in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 0..10), 1..4)) {
            let lists: Vec<RankedList> = scores
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut l = RankedList {
                        query_id: "q".into(),
                        entries: s.iter().enumerate()
                            .map(|(i, &x)| RankedEntry { doc_id: format!("{k}-{i}"), score: x, lang: String::new() })
                            .collect(),
                    };
                    l.sort();
                    l
                })
                .collect();
            let m = merge_by_score(&lists).unwrap();
            let mut got: Vec<&str> = m.doc_ids().collect();
            let mut want: Vec<&str> = lists.iter().flat_map(|l| l.doc_ids()).collect();
            got.sort_unstable();
            want.sort_unstable();
            prop_assert_eq!(got, want);
            prop_assert!(m.entries.iter().all(|e| (0.0..=1.0).contains(&e.score)));
        }
    }
}
