//! Corpus ingestion (bitext, collections, queries, TREC files) and the
//! synthetic cipher-language generator.
//!
//! Every loader is strict: a malformed line is an error naming the file and
//! line, never silently skipped. CRLF line endings are accepted.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub mod cipher;
pub mod trec;
pub mod vocab;

pub use cipher::{gen_cipher_corpus, CipherCorpus, CipherSpec};
pub use trec::{load_qrels, load_run, write_qrels, write_run};

/// A training pair: a sentence in `lang` and its English translation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitextPair {
    pub lang: String,
    pub source: String,
    pub english: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Lines with their 1-based numbers, CR stripped, blank lines skipped.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn tab_fields<'l>(path: &Path, n: usize, line: &'l str, expected: usize, what: &str) -> Result<Vec<&'l str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(parse_error(
            path,
            n,
            format!(
                "expected {expected} tab-separated columns ({what}), found {}",
                fields.len()
            ),
        ));
    }
    if let Some(i) = fields.iter().position(|f| f.trim().is_empty()) {
        return Err(parse_error(path, n, format!("column {} is empty", i + 1)));
    }
    Ok(fields)
}

/// Reads `lang<TAB>source<TAB>english` rows. When `languages` is given,
/// rows in any other language are a data error.
pub fn load_bitext(path: &Path, languages: Option<&[String]>) -> Result<Vec<BitextPair>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in lines(&text) {
        let f = tab_fields(path, n, line, 3, "lang, source, english")?;
        if let Some(langs) = languages {
            if !langs.iter().any(|l| l == f[0]) {
                return Err(Error::Data(format!(
                    "{}:{n}: language `{}` is not configured",
                    path.display(),
                    f[0]
                )));
            }
        }
        out.push(BitextPair {
            lang: f[0].to_string(),
            source: f[1].to_string(),
            english: f[2].to_string(),
        });
    }
    Ok(out)
}

pub fn bitext_to_tsv(pairs: &[BitextPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.lang, p.source, p.english))
        .collect()
}

/// Reads `docid<TAB>lang<TAB>text` rows; ids must be unique.
pub fn load_collection(path: &Path) -> Result<Vec<Document>> {
    let text = read_text(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines(&text) {
        let f = tab_fields(path, n, line, 3, "docid, lang, text")?;
        if !seen.insert(f[0].to_string()) {
            return Err(Error::Conflict(format!(
                "{}:{n}: duplicate document id `{}`",
                path.display(),
                f[0]
            )));
        }
        out.push(Document {
            id: f[0].to_string(),
            lang: f[1].to_string(),
            text: f[2].to_string(),
        });
    }
    Ok(out)
}

pub fn collection_to_tsv(docs: &[Document]) -> String {
    docs.iter()
        .map(|d| format!("{}\t{}\t{}\n", d.id, d.lang, d.text))
        .collect()
}

/// Reads `qid<TAB>text` rows; ids must be unique.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let text = read_text(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines(&text) {
        let f = tab_fields(path, n, line, 2, "qid, text")?;
        if !seen.insert(f[0].to_string()) {
            return Err(Error::Conflict(format!(
                "{}:{n}: duplicate query id `{}`",
                path.display(),
                f[0]
            )));
        }
        out.push(Query {
            id: f[0].to_string(),
            text: f[1].to_string(),
        });
    }
    Ok(out)
}

pub fn queries_to_tsv(queries: &[Query]) -> String {
    queries.iter().map(|q| format!("{}\t{}\n", q.id, q.text)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn bitext_parses_rows_and_tolerates_crlf() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "b.tsv", "xa\txa001 xa002\te001 e002\r\nen\te005\te005\r\n");
        let pairs = load_bitext(&p, None).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].english, "e001 e002");
        assert_eq!(pairs[1].lang, "en");
    }

    #[test]
    fn bitext_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "b.tsv", "xa\ta\tb\nxa\tonly-two\n");
        match load_bitext(&p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let p = file(&dir, "c.tsv", "xq\ta\tb\n");
        let langs = vec!["xa".to_string()];
        assert!(matches!(load_bitext(&p, Some(&langs)), Err(Error::Data(_))));
    }

    #[test]
    fn collection_and_queries_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let docs = vec![
            Document {
                id: "d1".into(),
                lang: "en".into(),
                text: "a b".into(),
            },
            Document {
                id: "d2".into(),
                lang: "xa".into(),
                text: "c".into(),
            },
        ];
        let p = file(&dir, "c.tsv", &collection_to_tsv(&docs));
        assert_eq!(load_collection(&p).unwrap(), docs);
        let dup = file(&dir, "d.tsv", "d1\ten\ta\nd1\ten\tb\n");
        assert!(matches!(load_collection(&dup), Err(Error::Conflict(_))));

        let qs = vec![Query {
            id: "q1".into(),
            text: "a b".into(),
        }];
        let p = file(&dir, "q.tsv", &queries_to_tsv(&qs));
        assert_eq!(load_queries(&p).unwrap(), qs);
    }
}
