//! Rank-based retrieval metrics.
//!
//! MAP, P, MRR and recall treat grade ≥ 1 as relevant; nDCG uses the gain
//! `2^grade − 1` with a `log₂(rank + 1)` discount. Queries without any
//! relevant document are left out of every mean; judged queries missing
//! from the run score 0.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::Qrels;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Average precision over the list, optionally cut at a depth.
    Map(Option<usize>),
    Ndcg(usize),
    Precision(usize),
    Mrr(Option<usize>),
    Recall(usize),
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, cutoff) = match lower.split_once('@') {
            Some((n, c)) => {
                let c: usize = c
                    .parse()
                    .ok()
                    .filter(|&c| c > 0)
                    .ok_or_else(|| Error::Config(format!("bad cutoff in metric `{s}`")))?;
                (n.to_string(), Some(c))
            }
            None => (lower, None),
        };
        let need = |c: Option<usize>| c.ok_or_else(|| Error::Config(format!("metric `{s}` needs a cutoff")));
        Ok(match name.as_str() {
            "map" => Metric::Map(cutoff),
            "mrr" => Metric::Mrr(cutoff),
            "ndcg" => Metric::Ndcg(need(cutoff)?),
            "p" => Metric::Precision(need(cutoff)?),
            "r" | "recall" => Metric::Recall(need(cutoff)?),
            _ => return Err(Error::Config(format!("unknown metric `{s}`"))),
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Map(None) => write!(f, "map"),
            Metric::Map(Some(c)) => write!(f, "map@{c}"),
            Metric::Mrr(None) => write!(f, "mrr"),
            Metric::Mrr(Some(c)) => write!(f, "mrr@{c}"),
            Metric::Ndcg(c) => write!(f, "ndcg@{c}"),
            Metric::Precision(c) => write!(f, "p@{c}"),
            Metric::Recall(c) => write!(f, "r@{c}"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub metric: Metric,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

fn log2_discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// Metric value of one ranked list (`ranking` is doc ids, best first).
pub fn score_query(metric: Metric, ranking: &[&str], qid: &str, qrels: &Qrels) -> f64 {
    let num_rel = qrels.num_relevant(qid);
    let depth = |c: Option<usize>| c.unwrap_or(usize::MAX).min(ranking.len());
    let is_rel = |d: &str| qrels.grade(qid, d) >= 1;
    match metric {
        Metric::Map(c) => {
            let mut hits = 0usize;
            let mut sum = 0.0;
            for (i, d) in ranking[..depth(c)].iter().enumerate() {
                if is_rel(d) {
                    hits += 1;
                    sum += hits as f64 / (i + 1) as f64;
                }
            }
            sum / num_rel as f64
        }
        Metric::Mrr(c) => ranking[..depth(c)]
            .iter()
            .position(|d| is_rel(d))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64),
        Metric::Precision(c) => ranking[..depth(Some(c))].iter().filter(|d| is_rel(d)).count() as f64 / c as f64,
        Metric::Recall(c) => ranking[..depth(Some(c))].iter().filter(|d| is_rel(d)).count() as f64 / num_rel as f64,
        Metric::Ndcg(c) => {
            let dcg: f64 = ranking[..depth(Some(c))]
                .iter()
                .enumerate()
                .map(|(i, d)| gain(qrels.grade(qid, d)) / log2_discount(i + 1))
                .sum();
            let mut ideal: Vec<u32> = qrels.judged(qid).map(|(_, g)| g).collect();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = ideal
                .iter()
                .take(c)
                .enumerate()
                .map(|(i, &g)| gain(g) / log2_discount(i + 1))
                .sum();
            dcg / idcg
        }
    }
}

/// Evaluates `metric` over every query of `qrels` that has a relevant
/// document. Runs for unjudged queries are ignored.
pub fn compute_metric(metric: Metric, run: &[RankedList], qrels: &Qrels) -> Result<MetricResult> {
    let mut by_qid: BTreeMap<&str, &RankedList> = BTreeMap::new();
    for list in run {
        if by_qid.insert(&list.query_id, list).is_some() {
            return Err(Error::Conflict(format!(
                "query `{}` appears twice in the run",
                list.query_id
            )));
        }
    }
    let mut per_query = BTreeMap::new();
    for qid in qrels.query_ids() {
        if qrels.num_relevant(qid) == 0 {
            continue;
        }
        let ranking: Vec<&str> = by_qid.get(qid).map(|l| l.doc_ids().collect()).unwrap_or_default();
        per_query.insert(qid.to_string(), score_query(metric, &ranking, qid, qrels));
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(MetricResult {
        metric,
        per_query,
        mean,
    })
}
