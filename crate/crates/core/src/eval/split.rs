//! Biased relevance distribution: most of a query's relevant documents are
//! kept in one language and the rest are spread over the others.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParallelGroups, Qrels};
use crate::error::{Error, Result};
use crate::tensor::derive_seed;

/// How many relevant documents each language keeps: the primary language
/// takes `ceil(fraction · total)`, the others share the rest equally with
/// the remainder handed out in language order. Returned in the order of
/// `others`.
pub fn split_counts(total: usize, fraction: f64, others: usize) -> (usize, Vec<usize>) {
    let primary = ((fraction * total as f64).ceil() as usize).min(total);
    let rest = total - primary;
    if others == 0 {
        return (primary, Vec::new());
    }
    let (base, extra) = (rest / others, rest % others);
    (primary, (0..others).map(|i| base + usize::from(i < extra)).collect())
}

/// Builds a qrels file in which each relevant document survives in exactly
/// one language. Per query a primary language is drawn from a stream
/// seeded by `(seed, qid)`; it receives the highest-graded documents.
pub fn biased_relevance_split(
    qrels: &Qrels,
    groups: &ParallelGroups,
    languages: &[String],
    primary_fraction: f64,
    seed: u64,
) -> Result<Qrels> {
    if languages.is_empty() {
        return Err(Error::Config("biased split needs at least one language".into()));
    }
    if !(0.0..=1.0).contains(&primary_fraction) {
        return Err(Error::Config(format!(
            "primary fraction {primary_fraction} is outside [0, 1]"
        )));
    }
    let mut out = Qrels::new();
    for qid in qrels.query_ids() {
        let qgroups = groups.get(qid);
        let mut covered = BTreeSet::new();
        let mut ranked = Vec::with_capacity(qgroups.len());
        for (gi, g) in qgroups.iter().enumerate() {
            let by_lang: HashMap<&str, &str> = g.iter().map(|(d, l)| (l.as_str(), d.as_str())).collect();
            let mut members = Vec::with_capacity(languages.len());
            for l in languages {
                let doc = by_lang
                    .get(l.as_str())
                    .ok_or_else(|| Error::Data(format!("query {qid}: a relevant document has no `{l}` copy")))?;
                members.push(*doc);
            }
            let grade = members.iter().map(|d| qrels.grade(qid, d)).max().unwrap_or(0);
            if grade == 0 {
                continue;
            }
            covered.extend(members.iter().copied());
            ranked.push((grade, gi, members));
        }
        if let Some(d) = qrels.relevant(qid).find(|d| !covered.contains(d)) {
            return Err(Error::Data(format!(
                "query {qid}: relevant document `{d}` belongs to no parallel group"
            )));
        }
        // Highest grade first; group order breaks ties.
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("biased/{qid}")));
        let primary = rng.random_range(0..languages.len());
        let others: Vec<usize> = (0..languages.len()).filter(|&i| i != primary).collect();
        let (n_primary, shares) = split_counts(ranked.len(), primary_fraction, others.len());
        let mut assignment = vec![primary; n_primary];
        for (&lang, &n) in others.iter().zip(&shares) {
            assignment.extend(std::iter::repeat_n(lang, n));
        }
        for ((grade, _, members), lang) in ranked.iter().zip(assignment) {
            let doc = members[lang];
            out.insert(qid, doc, *grade)?;
            out.set_lang(doc, &languages[lang]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs() -> Vec<String> {
        ["en", "xa", "xb", "xc"].iter().map(|s| s.to_string()).collect()
    }

    fn fixture(n: usize) -> (Qrels, ParallelGroups) {
        let mut q = Qrels::new();
        let mut g = ParallelGroups::new();
        for i in 0..n {
            let mut group = Vec::new();
            for l in langs() {
                let d = format!("d{i:02}-{l}");
                q.insert("q1", &d, if i < 3 { 2 } else { 1 }).unwrap();
                group.push((d, l));
            }
            g.insert("q1", group).unwrap();
        }
        (q, g)
    }

    #[test]
    fn counts_follow_the_remainder_rule() {
        assert_eq!(split_counts(10, 0.6, 3), (6, vec![2, 1, 1]));
        assert_eq!(split_counts(1, 0.6, 3), (1, vec![0, 0, 0]));
        assert_eq!(split_counts(0, 0.6, 3), (0, vec![0, 0, 0]));
        assert_eq!(split_counts(7, 0.6, 2), (5, vec![1, 1]));
    }

    #[test]
    fn ten_documents_four_languages() {
        let (q, g) = fixture(10);
        let out = biased_relevance_split(&q, &g, &langs(), 0.6, 3).unwrap();
        assert_eq!(out.num_relevant("q1"), 10);
        let mut per_lang: HashMap<String, usize> = HashMap::new();
        for d in out.relevant("q1") {
            *per_lang.entry(out.lang(d).unwrap().to_string()).or_default() += 1;
        }
        let mut counts: Vec<usize> = per_lang.values().copied().collect();
        counts.sort_unstable();
        assert_eq!(counts, [1, 1, 2, 6]);
        // The primary language holds every top-graded document.
        let primary = per_lang.iter().find(|(_, &n)| n == 6).unwrap().0.clone();
        for i in 0..3 {
            assert_eq!(out.grade("q1", &format!("d{i:02}-{primary}")), 2);
        }
        // Each source document survives once.
        for i in 0..10 {
            let n = langs()
                .iter()
                .filter(|l| out.grade("q1", &format!("d{i:02}-{l}")) > 0)
                .count();
            assert_eq!(n, 1);
        }
        assert_eq!(out, biased_relevance_split(&q, &g, &langs(), 0.6, 3).unwrap());
    }

    #[test]
    fn single_document_goes_to_the_primary_language() {
        let (q, g) = fixture(1);
        let out = biased_relevance_split(&q, &g, &langs(), 0.6, 0).unwrap();
        assert_eq!(out.num_relevant("q1"), 1);
    }

    #[test]
    fn non_parallel_relevance_is_a_data_error() {
        let (mut q, g) = fixture(2);
        q.insert("q1", "stray", 1).unwrap();
        assert!(matches!(
            biased_relevance_split(&q, &g, &langs(), 0.6, 0),
            Err(Error::Data(_))
        ));
        let (q, mut g) = fixture(2);
        g.insert("q1", vec![("solo".into(), "en".into())]).unwrap();
        assert!(matches!(
            biased_relevance_split(&q, &g, &langs(), 0.6, 0),
            Err(Error::Data(_))
        ));
    }
}
