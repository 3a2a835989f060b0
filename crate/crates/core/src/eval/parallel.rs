//! How differently a model treats the translations of one relevant
//! document: the spread of their scores and ranks in a multilingual run.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::ParallelGroups;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryParallel {
    pub qid: String,
    /// Mean over complete groups of (max − min) score.
    pub score_difference: f64,
    /// Mean over complete groups of (max − min) rank.
    pub rank_distance: f64,
    pub groups_used: usize,
    pub groups_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParallelReport {
    /// Mean over queries of the per-query score difference.
    pub s: f64,
    pub mean_rank_distance: f64,
    pub depth: usize,
    pub groups_used: usize,
    /// Groups with a member outside the top `depth`.
    pub groups_skipped: usize,
    pub per_query: Vec<QueryParallel>,
}

/// Groups missing any member from the top `depth` of their query's list
/// are skipped and counted; queries left with no complete group do not
/// enter the means.
pub fn parallel_doc_analysis(run: &[RankedList], groups: &ParallelGroups, depth: usize) -> Result<ParallelReport> {
    let lists: BTreeMap<&str, &RankedList> = run.iter().map(|l| (l.query_id.as_str(), l)).collect();
    let mut per_query = Vec::new();
    let (mut used_total, mut skipped_total) = (0, 0);
    for (qid, qgroups) in groups.iter() {
        let positions: HashMap<&str, (usize, f64)> = lists
            .get(qid)
            .map(|l| {
                l.entries
                    .iter()
                    .take(depth)
                    .enumerate()
                    .map(|(i, e)| (e.doc_id.as_str(), (i + 1, e.score)))
                    .collect()
            })
            .unwrap_or_default();
        let (mut ds, mut dr, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for g in qgroups {
            if g.is_empty() {
                return Err(Error::Contract(format!("query {qid} has an empty group")));
            }
            let found: Option<Vec<(usize, f64)>> = g.iter().map(|(d, _)| positions.get(d.as_str()).copied()).collect();
            let Some(found) = found else {
                skipped += 1;
                continue;
            };
            let hi = found.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let lo = found.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let rhi = found.iter().map(|p| p.0).max().expect("non-empty group");
            let rlo = found.iter().map(|p| p.0).min().expect("non-empty group");
            ds += hi - lo;
            dr += (rhi - rlo) as f64;
            used += 1;
        }
        used_total += used;
        skipped_total += skipped;
        if used > 0 {
            per_query.push(QueryParallel {
                qid: qid.to_string(),
                score_difference: ds / used as f64,
                rank_distance: dr / used as f64,
                groups_used: used,
                groups_skipped: skipped,
            });
        }
    }
    if per_query.is_empty() {
        return Err(Error::Data(format!(
            "no parallel group is fully inside the top {depth}"
        )));
    }
    let n = per_query.len() as f64;
    Ok(ParallelReport {
        s: per_query.iter().map(|q| q.score_difference).sum::<f64>() / n,
        mean_rank_distance: per_query.iter().map(|q| q.rank_distance).sum::<f64>() / n,
        depth,
        groups_used: used_total,
        groups_skipped: skipped_total,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RankedEntry;

    fn run(qid: &str, docs: &[(&str, f64)]) -> RankedList {
        let mut l = RankedList {
            query_id: qid.into(),
            entries: docs
                .iter()
                .map(|&(d, s)| RankedEntry {
                    doc_id: d.into(),
                    score: s,
                    lang: String::new(),
                })
                .collect(),
        };
        l.sort();
        l
    }

    fn group(docs: &[&str]) -> Vec<(String, String)> {
        docs.iter()
            .enumerate()
            .map(|(i, d)| (d.to_string(), format!("l{i}")))
            .collect()
    }

    #[test]
    fn single_group_spread() {
        let r = run("q", &[("a", 0.9), ("b", 0.7), ("c", 0.8), ("d", 0.6), ("x", 0.75)]);
        let mut g = ParallelGroups::new();
        g.insert("q", group(&["a", "b", "c", "d"])).unwrap();
        let rep = parallel_doc_analysis(&[r], &g, 1000).unwrap();
        assert!((rep.s - 0.3).abs() < 1e-12);
        assert_eq!(rep.mean_rank_distance, 4.0);
    }

    #[test]
    fn identical_scores_give_zero() {
        let r = run("q", &[("a", 0.5), ("b", 0.5), ("c", 0.5)]);
        let mut g = ParallelGroups::new();
        g.insert("q", group(&["a", "b", "c"])).unwrap();
        let rep = parallel_doc_analysis(&[r], &g, 1000).unwrap();
        assert_eq!(rep.s, 0.0);
        assert_eq!(rep.mean_rank_distance, 2.0);
    }

    #[test]
    fn groups_average_within_a_query_then_across_queries() {
        let r1 = run("q1", &[("a", 1.0), ("b", 0.8), ("c", 0.5), ("d", 0.1)]);
        let r2 = run("q2", &[("e", 1.0), ("f", 1.0)]);
        let mut g = ParallelGroups::new();
        g.insert("q1", group(&["a", "b"])).unwrap();
        g.insert("q1", group(&["c", "d"])).unwrap();
        g.insert("q2", group(&["e", "f"])).unwrap();
        let rep = parallel_doc_analysis(&[r1, r2], &g, 1000).unwrap();
        assert!((rep.per_query[0].score_difference - 0.3).abs() < 1e-12);
        assert!((rep.s - 0.15).abs() < 1e-12);
    }

    #[test]
    fn groups_outside_depth_are_skipped_and_counted() {
        let r = run("q", &[("a", 0.9), ("b", 0.8), ("c", 0.7), ("d", 0.1)]);
        let mut g = ParallelGroups::new();
        g.insert("q", group(&["a", "b"])).unwrap();
        g.insert("q", group(&["c", "d"])).unwrap();
        let rep = parallel_doc_analysis(&[r.clone()], &g, 3).unwrap();
        assert_eq!((rep.groups_used, rep.groups_skipped), (1, 1));
        assert!((rep.s - 0.1).abs() < 1e-12);
        assert!(matches!(parallel_doc_analysis(&[r], &g, 0), Err(Error::Data(_))));
    }

    #[test]
    fn empty_group_is_a_contract_error() {
        let mut g = ParallelGroups::new();
        g.insert("q", vec![]).unwrap();
        assert!(matches!(
            parallel_doc_analysis(&[run("q", &[("a", 1.0)])], &g, 10),
            Err(Error::Contract(_))
        ));
    }
}
