//! Evaluation: IR metrics, rank-list merging, significance testing,
//! parallel-document bias analysis and the biased-relevance protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod merge;
pub mod metrics;
pub mod parallel;
pub mod report;
pub mod split;
pub mod stats;

pub use merge::{merge_by_score, merge_round_robin, merge_round_robin_with, merge_runs, MergeStrategy};
pub use metrics::{compute_metric, Metric, MetricResult};
pub use parallel::{parallel_doc_analysis, ParallelReport};
pub use report::{evaluate, text_table, Comparison, EvalReport};
pub use split::biased_relevance_split;
pub use stats::{paired_t_test, TTest};

/// Graded judgments: `qid → docid → grade`, with optional document languages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
    langs: BTreeMap<String, String>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, doc: &str, grade: u32) -> Result<()> {
        let docs = self.grades.entry(qid.to_string()).or_default();
        if docs.contains_key(doc) {
            return Err(Error::Conflict(format!("duplicate judgment for ({qid}, {doc})")));
        }
        docs.insert(doc.to_string(), grade);
        Ok(())
    }

    pub fn set_lang(&mut self, doc: &str, lang: &str) {
        self.langs.insert(doc.to_string(), lang.to_string());
    }

    pub fn lang(&self, doc: &str) -> Option<&str> {
        self.langs.get(doc).map(String::as_str)
    }

    pub fn grade(&self, qid: &str, doc: &str) -> u32 {
        self.grades.get(qid).and_then(|d| d.get(doc)).copied().unwrap_or(0)
    }

    pub fn judged(&self, qid: &str) -> impl Iterator<Item = (&str, u32)> {
        self.grades
            .get(qid)
            .into_iter()
            .flatten()
            .map(|(d, &g)| (d.as_str(), g))
    }

    /// Documents with grade ≥ 1.
    pub fn relevant(&self, qid: &str) -> impl Iterator<Item = &str> {
        self.judged(qid).filter(|&(_, g)| g >= 1).map(|(d, _)| d)
    }

    pub fn num_relevant(&self, qid: &str) -> usize {
        self.relevant(qid).count()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    /// `(qid, doc, grade)` in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.grades
            .iter()
            .flat_map(|(q, d)| d.iter().map(move |(doc, &g)| (q.as_str(), doc.as_str(), g)))
    }

    pub fn len(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One relevant document and its translations: `(doc_id, lang)` pairs
/// with distinct languages.
pub type Group = Vec<(String, String)>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParallelGroups {
    by_query: BTreeMap<String, Vec<Group>>,
}

#[derive(Serialize, Deserialize)]
struct GroupLine {
    qid: String,
    groups: Vec<Group>,
}

impl ParallelGroups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, group: Group) -> Result<()> {
        let mut langs = BTreeSet::new();
        if let Some((_, l)) = group.iter().find(|(_, l)| !langs.insert(l.as_str())) {
            return Err(Error::Data(format!(
                "query {qid}: language `{l}` repeats inside a group"
            )));
        }
        self.by_query.entry(qid.to_string()).or_default().push(group);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> &[Group] {
        self.by_query.get(qid).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Group])> {
        self.by_query.iter().map(|(q, g)| (q.as_str(), g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    /// One JSON object per query: `{"qid":…,"groups":[[["doc","lang"],…],…]}`.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (qid, groups) in &self.by_query {
            out.push_str(&serde_json::to_string(&GroupLine {
                qid: qid.clone(),
                groups: groups.clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, path: &std::path::Path) -> Result<Self> {
        let mut g = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let rec: GroupLine = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
            for group in rec.groups {
                g.insert(&rec.qid, group).map_err(|e| parse(e.to_string()))?;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_reject_duplicates_and_default_to_zero() {
        let mut q = Qrels::new();
        q.insert("q1", "d7", 2).unwrap();
        q.insert("q1", "d8", 0).unwrap();
        assert!(matches!(q.insert("q1", "d7", 1), Err(Error::Conflict(_))));
        assert_eq!(q.grade("q1", "d7"), 2);
        assert_eq!(q.grade("q1", "nope"), 0);
        assert_eq!(q.relevant("q1").collect::<Vec<_>>(), ["d7"]);
    }

    #[test]
    fn groups_round_trip_and_reject_repeated_languages() {
        let mut g = ParallelGroups::new();
        g.insert("q1", vec![("a".into(), "en".into()), ("b".into(), "xa".into())])
            .unwrap();
        assert!(g
            .insert("q1", vec![("c".into(), "en".into()), ("d".into(), "en".into())])
            .is_err());
        let text = g.to_jsonl().unwrap();
        assert_eq!(text, "{\"qid\":\"q1\",\"groups\":[[[\"a\",\"en\"],[\"b\",\"xa\"]]]}\n");
        assert_eq!(ParallelGroups::from_jsonl(&text, "g".as_ref()).unwrap(), g);
    }
}
