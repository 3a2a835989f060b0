//! TREC qrels (`qid 0 docid grade`) and run (`qid Q0 docid rank score tag`)
//! files.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{lines, parse_error, read_text, write_text};
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::retrieval::{RankedEntry, RankedList};

/// Deepest rank written to a run file.
pub const MAX_RUN_DEPTH: usize = 1000;

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let text = read_text(path)?;
    let mut q = Qrels::new();
    for (n, line) in lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_error(
                path,
                n,
                format!("expected `qid 0 docid grade`, found {} fields", f.len()),
            ));
        }
        let grade: u32 = f[3]
            .parse()
            .map_err(|_| parse_error(path, n, format!("grade {:?} is not a non-negative integer", f[3])))?;
        q.insert(f[0], f[2], grade)
            .map_err(|e| Error::Conflict(format!("{}:{n}: {e}", path.display())))?;
    }
    Ok(q)
}

pub fn qrels_to_string(qrels: &Qrels) -> String {
    qrels.iter().map(|(q, d, g)| format!("{q} 0 {d} {g}\n")).collect()
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    write_text(path, &qrels_to_string(qrels))
}

/// Run text for `lists` in the given order, each cut at rank 1000.
pub fn run_to_string(lists: &[RankedList], tag: &str) -> String {
    let mut out = String::new();
    for l in lists {
        for (i, e) in l.entries.iter().take(MAX_RUN_DEPTH).enumerate() {
            out += &format!("{} Q0 {} {} {:.6} {tag}\n", l.query_id, e.doc_id, i + 1, e.score);
        }
    }
    out
}

pub fn write_run(path: &Path, lists: &[RankedList], tag: &str) -> Result<()> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::Config(format!("run tag {tag:?} must be one non-empty word")));
    }
    write_text(path, &run_to_string(lists, tag))
}

/// Reads a run; queries keep their first-appearance order and entries are
/// ordered by the rank column.
pub fn load_run(path: &Path) -> Result<Vec<RankedList>> {
    let text = read_text(path)?;
    let mut lists: Vec<(RankedList, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_error(
                path,
                n,
                format!("expected `qid Q0 docid rank score tag`, found {} fields", f.len()),
            ));
        }
        let rank: usize = f[3]
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| parse_error(path, n, format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| parse_error(path, n, format!("bad score {:?}", f[4])))?;
        if !seen.insert((f[0].to_string(), f[2].to_string())) {
            return Err(Error::Conflict(format!(
                "{}:{n}: document `{}` repeats for query {}",
                path.display(),
                f[2],
                f[0]
            )));
        }
        let i = *slot.entry(f[0].to_string()).or_insert_with(|| {
            lists.push((RankedList::new(f[0]), Vec::new()));
            lists.len() - 1
        });
        lists[i].0.entries.push(RankedEntry {
            doc_id: f[2].to_string(),
            score,
            lang: String::new(),
        });
        lists[i].1.push(rank);
    }
    Ok(lists
        .into_iter()
        .map(|(mut l, ranks)| {
            let mut paired: Vec<(usize, RankedEntry)> = ranks.into_iter().zip(l.entries).collect();
            paired.sort_by_key(|p| p.0);
            l.entries = paired.into_iter().map(|p| p.1).collect();
            l
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_line_is_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.txt");
        std::fs::write(&p, "q1 0 d7 2\r\nq1 0 d8 0\n").unwrap();
        let q = load_qrels(&p).unwrap();
        assert_eq!(q.grade("q1", "d7"), 2);
        assert_eq!(qrels_to_string(&q), "q1 0 d7 2\nq1 0 d8 0\n");

        std::fs::write(&p, "q1 0 d7 2\nq1 0 d7 1\n").unwrap();
        assert!(matches!(load_qrels(&p), Err(Error::Conflict(_))));
        std::fs::write(&p, "q1 0 d7\n").unwrap();
        assert!(matches!(load_qrels(&p), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&p, "q1 0 d7 -1\n").unwrap();
        assert!(matches!(load_qrels(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn run_round_trip_keeps_order_and_six_decimals() {
        let mut l = RankedList::new("q2");
        for (d, s) in [("b", 0.123456789), ("a", 0.1), ("c", -2.5)] {
            l.entries.push(RankedEntry {
                doc_id: d.into(),
                score: s,
                lang: "xa".into(),
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.txt");
        write_run(&p, &[l.clone(), RankedList::new("q9")], "test").unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "q2 Q0 b 1 0.123457 test");
        let back = load_run(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].doc_ids().collect::<Vec<_>>(), ["b", "a", "c"]);
        for (x, y) in back[0].entries.iter().zip(&l.entries) {
            assert!((x.score - y.score).abs() <= 5e-7);
        }
        assert_eq!(run_to_string(&back, "test"), text);
    }

    #[test]
    fn runs_are_cut_at_depth_1000() {
        let mut l = RankedList::new("q");
        for i in 0..1200 {
            l.entries.push(RankedEntry {
                doc_id: format!("d{i}"),
                score: -(i as f64),
                lang: String::new(),
            });
        }
        assert_eq!(run_to_string(&[l], "t").lines().count(), 1000);
    }

    #[test]
    fn malformed_runs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.txt");
        std::fs::write(&p, "q Q0 d 1 0.5 t\nq Q0 d 2 0.4 t\n").unwrap();
        assert!(matches!(load_run(&p), Err(Error::Conflict(_))));
        std::fs::write(&p, "q Q0 d 1 x t\n").unwrap();
        assert!(matches!(load_run(&p), Err(Error::Parse { .. })));
    }
}
