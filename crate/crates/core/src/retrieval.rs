//! Exhaustive dense retrieval over document embeddings.
//!
//! Long documents are split into overlapping passages; each passage is
//! embedded separately and a document scores as its best passage.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{put_u32, Reader};
use crate::corpus::vocab::{tokenize, Vocab};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::SpdModel;
use crate::scalar::Scalar;
use crate::teacher::TeacherProvider;

pub const INDEX_MAGIC: &[u8; 4] = b"SPDI";

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub doc_id: String,
    pub lang: String,
    /// One vector per passage, in passage order.
    pub passages: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    records: Vec<IndexRecord>,
    ids: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    /// Empty when unknown (for example a list read back from a TREC run).
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts by descending score, ties by ascending doc id. Equal scores
    /// compare equal whatever their sign bit (`-0.0 == 0.0`).
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

impl DenseIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn insert(&mut self, record: IndexRecord) -> Result<()> {
        if record.passages.is_empty() {
            return Err(Error::Contract(format!("document `{}` has no passages", record.doc_id)));
        }
        if let Some(p) = record.passages.iter().find(|p| p.len() != self.dim) {
            return Err(Error::shape(
                "index insert",
                format!(
                    "`{}` has a {}-dim vector, index is {}-dim",
                    record.doc_id,
                    p.len(),
                    self.dim
                ),
            ));
        }
        if !self.ids.insert(record.doc_id.clone()) {
            return Err(Error::Conflict(format!("duplicate document id `{}`", record.doc_id)));
        }
        self.records.push(record);
        Ok(())
    }

    /// Single-vector convenience insert.
    pub fn insert_vector(&mut self, doc_id: &str, lang: &str, vector: Vec<f32>) -> Result<()> {
        self.insert(IndexRecord {
            doc_id: doc_id.to_string(),
            lang: lang.to_string(),
            passages: vec![vector],
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, self.dim)?;
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            for s in [&r.doc_id, &r.lang] {
                put_u32(&mut out, s.len())?;
                out.extend_from_slice(s.as_bytes());
            }
            put_u32(&mut out, r.passages.len())?;
            for x in r.passages.iter().flatten() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut index = Self::new(dim);
        let string = |r: &mut Reader| -> Result<String> {
            let n = r.u32()? as usize;
            std::str::from_utf8(r.take(n)?)
                .map(str::to_string)
                .map_err(|_| Error::Format("string is not UTF-8".into()))
        };
        for _ in 0..count {
            let doc_id = string(&mut r)?;
            let lang = string(&mut r)?;
            let n = r.u32()? as usize;
            let passages = (0..n)
                .map(|_| (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            index
                .insert(IndexRecord { doc_id, lang, passages })
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        if !r.done() {
            return Err(Error::Format("trailing bytes after last record".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn max_passage_score(scores: &[f64]) -> Result<f64> {
    scores
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::Contract("max over zero passages".into()))
}

/// Exhaustive top-`k` by dot product; ties go to the smaller doc id.
pub fn search(index: &DenseIndex, query_id: &str, query: &[f32], k: usize) -> Result<RankedList> {
    if query.len() != index.dim {
        return Err(Error::shape(
            "search",
            format!("query has {} dims, index has {}", query.len(), index.dim),
        ));
    }
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let mut list = RankedList::new(query_id);
    for r in &index.records {
        let scores: Vec<f64> = r.passages.iter().map(|p| dot(p, query)).collect();
        list.entries.push(RankedEntry {
            doc_id: r.doc_id.clone(),
            score: max_passage_score(&scores)?,
            lang: r.lang.clone(),
        });
    }
    list.sort();
    list.entries.truncate(k);
    Ok(list)
}

/// Window/stride for passage splitting, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassageConfig {
    pub window: usize,
    pub stride: usize,
}

impl Default for PassageConfig {
    fn default() -> Self {
        Self {
            window: 180,
            stride: 90,
        }
    }
}

impl PassageConfig {
    /// Largest window a model accepts (one slot is the language token),
    /// with half-window stride.
    pub fn for_model(max_seq_len: usize) -> Self {
        let window = max_seq_len.saturating_sub(1).max(1);
        Self {
            window,
            stride: (window / 2).max(1),
        }
    }
}

/// Passages start at `0, stride, 2·stride, …` and stop once the end of the
/// document is covered; the last one may be shorter than `window`.
pub fn split_passages(tokens: &[usize], config: PassageConfig) -> Result<Vec<&[usize]>> {
    let PassageConfig { window, stride } = config;
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Config(format!(
            "need 0 < stride ≤ window, got window {window}, stride {stride}"
        )));
    }
    if tokens.is_empty() {
        return Err(Error::Contract("cannot split an empty document".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(tokens.len());
        out.push(&tokens[start..end]);
        if end == tokens.len() {
            return Ok(out);
        }
        start += stride;
    }
}

/// Builds an index with `embed` applied to every document in parallel;
/// records keep input order whatever the worker count.
pub fn build_index<F>(dim: usize, docs: &[Document], embed: F) -> Result<DenseIndex>
where
    F: Fn(&Document) -> Result<Vec<Vec<f32>>> + Sync,
{
    let mut seen = HashSet::new();
    if let Some(d) = docs.iter().find(|d| !seen.insert(d.id.as_str())) {
        return Err(Error::Conflict(format!("duplicate document id `{}`", d.id)));
    }
    let passages: Vec<Vec<Vec<f32>>> = docs.par_iter().map(&embed).collect::<Result<_>>()?;
    let mut index = DenseIndex::new(dim);
    for (d, p) in docs.iter().zip(passages) {
        index.insert(IndexRecord {
            doc_id: d.id.clone(),
            lang: d.lang.clone(),
            passages: p,
        })?;
    }
    Ok(index)
}

/// Indexes a collection with the student, one vector per passage.
pub fn index_collection<T: Scalar>(
    docs: &[Document],
    vocab: &Vocab,
    model: &SpdModel<T>,
    passages: PassageConfig,
) -> Result<DenseIndex> {
    if passages.window + 1 > model.config().max_seq_len {
        return Err(Error::Config(format!(
            "passage window {} does not fit max_seq_len {}",
            passages.window,
            model.config().max_seq_len
        )));
    }
    build_index(model.config().dim, docs, |d| {
        model.config().language_index(&d.lang)?;
        let ids = tokenize(&d.text, vocab);
        split_passages(&ids, passages)
            .map_err(|e| Error::Data(format!("document `{}`: {e}", d.id)))?
            .into_iter()
            .map(|p| {
                Ok(model
                    .embed(p, &d.lang)?
                    .iter()
                    .map(|x| x.to_f64_lossy() as f32)
                    .collect())
            })
            .collect()
    })
}

/// Indexes a collection with the teacher's document map (whole text, no
/// passage splitting).
pub fn index_with_teacher(docs: &[Document], teacher: &TeacherProvider) -> Result<DenseIndex> {
    build_index(teacher.dim(), docs, |d| Ok(vec![teacher.embed_document(&d.text)?]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_index() -> DenseIndex {
        let mut idx = DenseIndex::new(2);
        idx.insert_vector("a", "en", vec![1.0, 0.0]).unwrap();
        idx.insert_vector("b", "en", vec![0.0, 1.0]).unwrap();
        idx.insert_vector("c", "en", vec![0.5, 0.5]).unwrap();
        idx
    }

    #[test]
    fn search_example() {
        let r = search(&small_index(), "q", &[1.0, 0.0], 3).unwrap();
        let got: Vec<_> = r.entries.iter().map(|e| (e.doc_id.as_str(), e.score)).collect();
        assert_eq!(got, vec![("a", 1.0), ("c", 0.5), ("b", 0.0)]);
        assert_eq!(search(&small_index(), "q", &[1.0, 0.0], 50).unwrap().len(), 3);
        assert!(matches!(
            search(&small_index(), "q", &[1.0], 1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn ties_go_to_smaller_doc_id() {
        let mut idx = DenseIndex::new(1);
        for id in ["z", "m", "a"] {
            idx.insert_vector(id, "en", vec![1.0]).unwrap();
        }
        let r = search(&idx, "q", &[2.0], 3).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["a", "m", "z"]);
    }

    #[test]
    fn duplicate_ids_and_bad_dims_are_rejected() {
        let mut idx = small_index();
        assert!(matches!(
            idx.insert_vector("a", "en", vec![0.0, 0.0]),
            Err(Error::Conflict(_))
        ));
        assert!(matches!(
            idx.insert_vector("d", "en", vec![0.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn passage_examples() {
        let t: Vec<usize> = (0..300).collect();
        let cfg = PassageConfig::default();
        let lens = |n: usize| -> Vec<(usize, usize)> {
            split_passages(&t[..n], cfg)
                .unwrap()
                .iter()
                .map(|p| (p[0], p.len()))
                .collect()
        };
        assert_eq!(lens(300), vec![(0, 180), (90, 180), (180, 120)]);
        assert_eq!(lens(100), vec![(0, 100)]);
        assert_eq!(lens(181), vec![(0, 180), (90, 91)]);
        assert_eq!(lens(180), vec![(0, 180)]);
        assert!(matches!(split_passages(&[], cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn max_passage_examples() {
        assert_eq!(max_passage_score(&[0.2, 0.9, 0.4]).unwrap(), 0.9);
        assert_eq!(max_passage_score(&[0.3]).unwrap(), 0.3);
        assert_eq!(max_passage_score(&[0.5, 0.5]).unwrap(), 0.5);
        assert!(max_passage_score(&[]).is_err());
    }

    #[test]
    fn index_file_round_trip() {
        let mut idx = small_index();
        idx.insert(IndexRecord {
            doc_id: "long".into(),
            lang: "xa".into(),
            passages: vec![vec![0.1, 0.2], vec![0.3, 0.4]],
        })
        .unwrap();
        let bytes = idx.to_bytes().unwrap();
        assert_eq!(DenseIndex::from_bytes(&bytes).unwrap(), idx);
        let mut bad = bytes.clone();
        bad[0] = b'?';
        assert!(matches!(DenseIndex::from_bytes(&bad), Err(Error::Format(_))));
        assert!(DenseIndex::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    proptest! {
        #[test]
        fn passages_cover_every_token(n in 1usize..400, window in 1usize..50, stride_frac in 0.01f64..1.0) {
            let stride = ((window as f64 * stride_frac).ceil() as usize).clamp(1, window);
            let t: Vec<usize> = (0..n).collect();
            let ps = split_passages(&t, PassageConfig { window, stride }).unwrap();
            let mut covered = vec![false; n];
            for (i, p) in ps.iter().enumerate() {
                prop_assert_eq!(p[0], i * stride);
                prop_assert!(p.len() <= window);
                for &x in p.iter() { covered[x] = true; }
            }
            prop_assert!(covered.iter().all(|&c| c));
            prop_assert_eq!(*ps.last().unwrap().last().unwrap(), n - 1);
        }

        #[test]
        fn max_passage_ranking_matches_independent_scoring(
            docs in prop::collection::vec(prop::collection::vec(prop::collection::vec(-4i8..4, 3), 1..4), 1..30),
            q in prop::collection::vec(-4i8..4, 3),
        ) {
            let mut idx = DenseIndex::new(3);
            let mut expected = Vec::new();
            for (i, passages) in docs.iter().enumerate() {
                let ps: Vec<Vec<f32>> = passages.iter().map(|p| p.iter().map(|&x| x as f32).collect()).collect();
                let best = passages
                    .iter()
                    .map(|p| p.iter().zip(&q).map(|(&a, &b)| a as i32 * b as i32).sum::<i32>())
                    .max()
                    .unwrap();
                let id = format!("d{i:03}");
                expected.push((-best, id.clone()));
                idx.insert(IndexRecord { doc_id: id, lang: "en".into(), passages: ps }).unwrap();
            }
            expected.sort();
            let qf: Vec<f32> = q.iter().map(|&x| x as f32).collect();
            let r = search(&idx, "q", &qf, docs.len()).unwrap();
            let got: Vec<(i32, String)> = r.entries.iter().map(|e| (-(e.score as i32), e.doc_id.clone())).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
