//! Evaluation reports as JSON and aligned plain text.

use serde::Serialize;

use super::metrics::{compute_metric, Metric, MetricResult};
use super::parallel::ParallelReport;
use super::stats::{paired_t_test, TTest};
use super::Qrels;
use crate::error::Result;
use crate::retrieval::RankedList;

/// Renders rows under headers with space-padded columns; the first column is
/// left-aligned, the rest right-aligned.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: Metric,
    pub mean: f64,
    pub other_mean: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub queries: usize,
    pub metrics: Vec<MetricResult>,
    pub comparisons: Vec<Comparison>,
}

/// Evaluates `run` on every metric; with `other`, adds a paired t-test per
/// metric over the same judged queries.
pub fn evaluate(
    run: &[RankedList],
    qrels: &Qrels,
    metrics: &[Metric],
    other: Option<&[RankedList]>,
) -> Result<EvalReport> {
    let mut results = Vec::new();
    let mut comparisons = Vec::new();
    for &m in metrics {
        let r = compute_metric(m, run, qrels)?;
        if let Some(other) = other {
            let o = compute_metric(m, other, qrels)?;
            let a: Vec<f64> = r.per_query.values().copied().collect();
            let b: Vec<f64> = o.per_query.values().copied().collect();
            comparisons.push(Comparison {
                metric: m,
                mean: r.mean,
                other_mean: o.mean,
                test: paired_t_test(&a, &b)?,
            });
        }
        results.push(r);
    }
    Ok(EvalReport {
        queries: results.first().map_or(0, |r| r.per_query.len()),
        metrics: results,
        comparisons,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .metrics
            .iter()
            .map(|m| vec![m.metric.to_string(), format!("{:.4}", m.mean)])
            .collect();
        let mut out = text_table(&["metric", "mean"], &rows);
        out += &format!("queries: {}\n", self.queries);
        if !self.comparisons.is_empty() {
            let rows: Vec<Vec<String>> = self
                .comparisons
                .iter()
                .map(|c| {
                    vec![
                        c.metric.to_string(),
                        format!("{:.4}", c.mean),
                        format!("{:.4}", c.other_mean),
                        c.test.t.map_or("-".into(), |t| format!("{t:.4}")),
                        format!("{:.4}", c.test.p),
                        if c.test.p < 0.05 { "*".into() } else { String::new() },
                    ]
                })
                .collect();
            out += "\n";
            out += &text_table(&["metric", "run", "other", "t", "p", "p<0.05"], &rows);
        }
        out
    }
}

impl ParallelReport {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .per_query
            .iter()
            .map(|q| {
                vec![
                    q.qid.clone(),
                    format!("{:.6}", q.score_difference),
                    format!("{:.2}", q.rank_distance),
                    q.groups_used.to_string(),
                    q.groups_skipped.to_string(),
                ]
            })
            .collect();
        let mut out = text_table(&["qid", "score_diff", "rank_dist", "used", "skipped"], &rows);
        out += &format!(
            "\nS = {:.6}\nmean rank distance = {:.2}\ngroups used = {}, skipped = {} (depth {})\n",
            self.s, self.mean_rank_distance, self.groups_used, self.groups_skipped, self.depth
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align() {
        let t = text_table(
            &["metric", "mean"],
            &[
                vec!["map".into(), "0.5000".into()],
                vec!["ndcg@10".into(), "1.0".into()],
            ],
        );
        assert_eq!(t, "metric     mean\nmap      0.5000\nndcg@10     1.0\n");
    }
}
