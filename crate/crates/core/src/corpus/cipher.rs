//! Synthetic multilingual corpora built from token ciphers of English.
//!
//! English text is drawn from a topical generator over `vocab_size`
//! concepts: every topic owns a few topic words and all topics share the
//! remaining common words. A cipher language writes concept `c` as its own
//! surface form `"{lang}{π(c)}"` for a seeded permutation `π`, so each
//! language is a lossless re-encoding of English with a disjoint block of
//! the vocabulary. English uses the identity permutation.
//!
//! The optional zero-shot language is also a bijective cipher, but never has
//! bitext: for every concept it borrows the surface form of a randomly
//! chosen trained cipher language, the way a related language shares
//! subwords with languages a multilingual model has seen.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trec::{qrels_to_string, write_qrels};
use super::vocab::{Vocab, MAX_LANGUAGES};
use super::{bitext_to_tsv, collection_to_tsv, queries_to_tsv, write_text, BitextPair, Document, Query};
use crate::error::{Error, Result};
use crate::eval::{ParallelGroups, Qrels};
use crate::tensor::derive_seed;

pub const ENGLISH: &str = "en";
pub const SCHEMA_VERSION: u32 = 1;

/// File names inside a generated corpus directory.
pub mod files {
    pub const MANIFEST: &str = "corpus.json";
    pub const VOCAB: &str = "vocab.tsv";
    pub const CIPHERS: &str = "ciphers.json";
    pub const BITEXT: &str = "bitext.tsv";
    pub const HELDOUT: &str = "heldout.tsv";
    pub const COLLECTION: &str = "collection.tsv";
    pub const QUERIES: &str = "queries.tsv";
    pub const QRELS: &str = "qrels.txt";
    pub const GROUPS: &str = "groups.jsonl";
    pub const ZEROSHOT_COLLECTION: &str = "zeroshot_collection.tsv";
    pub const ZEROSHOT_QRELS: &str = "zeroshot_qrels.txt";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CipherSpec {
    pub schema: u32,
    /// Cipher language codes (English is added separately).
    pub languages: Vec<String>,
    pub include_english: bool,
    pub zero_shot_language: Option<String>,
    /// Concepts per language.
    pub vocab_size: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    /// Chance that a sentence token is a topic word rather than a common word.
    pub topic_prob: f64,
    /// Inclusive token-count ranges.
    pub sentence_len: (usize, usize),
    pub doc_len: (usize, usize),
    pub query_len: (usize, usize),
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub docs_per_topic: usize,
    pub queries: usize,
}

impl Default for CipherSpec {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            languages: vec!["xa".into(), "xb".into(), "xc".into()],
            include_english: true,
            zero_shot_language: Some("zz".into()),
            vocab_size: 200,
            topics: 25,
            words_per_topic: 6,
            topic_prob: 0.7,
            sentence_len: (6, 20),
            doc_len: (10, 40),
            query_len: (3, 5),
            train_pairs: 2000,
            heldout_pairs: 200,
            docs_per_topic: 8,
            queries: 100,
        }
    }
}

impl CipherSpec {
    /// Languages with bitext, in model order (English first when present).
    pub fn trained_languages(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.include_english {
            out.push(ENGLISH.to_string());
        }
        out.extend(self.languages.iter().cloned());
        out
    }

    pub fn n_docs(&self) -> usize {
        self.topics * self.docs_per_topic
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "unsupported corpus schema {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        let langs = self.trained_languages();
        if langs.is_empty() {
            return bad("no languages configured".into());
        }
        let mut all = langs.clone();
        all.extend(self.zero_shot_language.iter().cloned());
        if all.len() > MAX_LANGUAGES {
            return bad(format!("at most {MAX_LANGUAGES} languages are supported"));
        }
        for (i, l) in all.iter().enumerate() {
            if l.is_empty() || !l.chars().all(|c| c.is_ascii_lowercase()) {
                return bad(format!("language code {l:?} must be lowercase ASCII letters"));
            }
            if all[..i].contains(l) {
                return bad(format!("language `{l}` is listed twice"));
            }
        }
        if self.zero_shot_language.is_some() && self.languages.is_empty() {
            return bad("a zero-shot language needs at least one trained cipher language".into());
        }
        if self.topics == 0 || self.words_per_topic == 0 {
            return bad("topics and words_per_topic must be positive".into());
        }
        if self.topics * self.words_per_topic >= self.vocab_size {
            return bad(format!(
                "vocab_size {} is too small for {} topics × {} words plus common words",
                self.vocab_size, self.topics, self.words_per_topic
            ));
        }
        if !(0.0..=1.0).contains(&self.topic_prob) {
            return bad("topic_prob must lie in [0, 1]".into());
        }
        for (name, (lo, hi)) in [
            ("sentence_len", self.sentence_len),
            ("doc_len", self.doc_len),
            ("query_len", self.query_len),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) is empty or starts at 0"));
            }
        }
        if self.query_len.1 > self.words_per_topic {
            return bad("queries cannot have more distinct words than a topic owns".into());
        }
        if self.train_pairs == 0 || self.docs_per_topic == 0 || self.queries == 0 {
            return bad("train_pairs, docs_per_topic and queries must be positive".into());
        }
        Ok(())
    }
}

/// Surface form of concept `c` in language `lang` given its permutation.
fn surface(lang: &str, index: usize, width: usize) -> String {
    format!("{lang}{index:0width$}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CipherCorpus {
    pub spec: CipherSpec,
    pub seed: u64,
    pub vocab: Vocab,
    /// Language → surface form of each concept.
    pub ciphers: BTreeMap<String, Vec<String>>,
    pub train: Vec<BitextPair>,
    pub heldout: Vec<BitextPair>,
    pub collection: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub groups: ParallelGroups,
    pub zero_shot_collection: Vec<Document>,
    pub zero_shot_qrels: Qrels,
}

/// Contents of `corpus.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub seed: u64,
    pub trained_languages: Vec<String>,
    pub spec: CipherSpec,
}

impl CorpusManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(files::MANIFEST);
        let text = super::read_text(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

struct Generator<'s> {
    spec: &'s CipherSpec,
}

impl Generator<'_> {
    fn topic_words(&self, topic: usize) -> std::ops::Range<usize> {
        topic * self.spec.words_per_topic..(topic + 1) * self.spec.words_per_topic
    }

    fn common_words(&self) -> std::ops::Range<usize> {
        self.spec.topics * self.spec.words_per_topic..self.spec.vocab_size
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, topic: usize, len: (usize, usize)) -> Vec<usize> {
        let n = rng.random_range(len.0..=len.1);
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < self.spec.topic_prob {
                    rng.random_range(self.topic_words(topic))
                } else {
                    rng.random_range(self.common_words())
                }
            })
            .collect()
    }
}

fn render(concepts: &[usize], cipher: &[String]) -> String {
    concepts
        .iter()
        .map(|&c| cipher[c].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// Generates a full corpus; every output is a function of `(spec, seed)`.
pub fn gen_cipher_corpus(spec: &CipherSpec, seed: u64) -> Result<CipherCorpus> {
    spec.validate()?;
    let gen = Generator { spec };
    let langs = spec.trained_languages();
    let width = (spec.vocab_size - 1).to_string().len();

    // English text is always rendered, even when English has no bitext.
    let mut ciphers = BTreeMap::new();
    let mut words = Vec::new();
    let mut written: Vec<&String> = spec.languages.iter().collect();
    let english = ENGLISH.to_string();
    written.insert(0, &english);
    for lang in written {
        let mut perm: Vec<usize> = (0..spec.vocab_size).collect();
        if lang != ENGLISH {
            perm.shuffle(&mut stream(seed, &format!("cipher/{lang}")));
        }
        let forms: Vec<String> = perm.iter().map(|&i| surface(lang, i, width)).collect();
        let mut block = forms.clone();
        block.sort();
        words.extend(block);
        ciphers.insert(lang.to_string(), forms);
    }
    if let Some(zs) = &spec.zero_shot_language {
        let mut rng = stream(seed, &format!("cipher/{zs}"));
        let forms = (0..spec.vocab_size)
            .map(|c| {
                let donor = spec.languages.choose(&mut rng).expect("validated non-empty");
                ciphers[donor][c].clone()
            })
            .collect();
        ciphers.insert(zs.clone(), forms);
    }
    let vocab = Vocab::new(words)?;

    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for lang in &langs {
        let mut rng = stream(seed, &format!("bitext/{lang}"));
        for i in 0..spec.train_pairs + spec.heldout_pairs {
            let topic = rng.random_range(0..spec.topics);
            let s = gen.sentence(&mut rng, topic, spec.sentence_len);
            let pair = BitextPair {
                lang: lang.clone(),
                source: render(&s, &ciphers[lang]),
                english: render(&s, &ciphers[ENGLISH]),
            };
            if i < spec.train_pairs {
                train.push(pair);
            } else {
                heldout.push(pair);
            }
        }
    }

    let mut rng = stream(seed, "docs");
    let docs: Vec<(String, usize, Vec<usize>)> = (0..spec.n_docs())
        .map(|i| {
            let topic = i / spec.docs_per_topic;
            (format!("d{i:04}"), topic, gen.sentence(&mut rng, topic, spec.doc_len))
        })
        .collect();
    let copy_id = |base: &str, lang: &str| format!("{base}-{lang}");
    let mut collection = Vec::new();
    for (base, _, text) in &docs {
        for lang in &langs {
            collection.push(Document {
                id: copy_id(base, lang),
                lang: lang.clone(),
                text: render(text, &ciphers[lang]),
            });
        }
    }
    let zero_shot_collection: Vec<Document> = match &spec.zero_shot_language {
        Some(zs) => docs
            .iter()
            .map(|(base, _, text)| Document {
                id: copy_id(base, zs),
                lang: zs.clone(),
                text: render(text, &ciphers[zs]),
            })
            .collect(),
        None => Vec::new(),
    };

    let mut rng = stream(seed, "queries");
    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    let mut zero_shot_qrels = Qrels::new();
    let mut groups = ParallelGroups::new();
    for q in 0..spec.queries {
        let topic = q % spec.topics;
        let n = rng.random_range(spec.query_len.0..=spec.query_len.1);
        let pool: Vec<usize> = gen.topic_words(topic).collect();
        let terms: Vec<usize> = pool.choose_multiple(&mut rng, n).copied().collect();
        let qid = format!("q{q:03}");
        queries.push(Query {
            id: qid.clone(),
            text: render(&terms, &ciphers[ENGLISH]),
        });
        for (base, t, text) in &docs {
            if *t != topic {
                continue;
            }
            let overlap = terms.iter().filter(|c| text.contains(c)).count();
            let grade = if overlap >= 2 { 2 } else { 1 };
            let mut group = Vec::new();
            for lang in &langs {
                let id = copy_id(base, lang);
                qrels.insert(&qid, &id, grade)?;
                qrels.set_lang(&id, lang);
                group.push((id, lang.clone()));
            }
            groups.insert(&qid, group)?;
            if let Some(zs) = &spec.zero_shot_language {
                let id = copy_id(base, zs);
                zero_shot_qrels.insert(&qid, &id, grade)?;
                zero_shot_qrels.set_lang(&id, zs);
            }
        }
    }

    Ok(CipherCorpus {
        spec: spec.clone(),
        seed,
        vocab,
        ciphers,
        train,
        heldout,
        collection,
        queries,
        qrels,
        groups,
        zero_shot_collection,
        zero_shot_qrels,
    })
}

impl CipherCorpus {
    pub fn trained_languages(&self) -> Vec<String> {
        self.spec.trained_languages()
    }

    /// Maps text in `lang` back to English through the inverse cipher.
    pub fn decipher(&self, text: &str, lang: &str) -> Result<String> {
        let forms = self
            .ciphers
            .get(lang)
            .ok_or_else(|| Error::MissingLanguage(lang.to_string()))?;
        let inverse: HashMap<&str, usize> = forms.iter().enumerate().map(|(c, f)| (f.as_str(), c)).collect();
        let english = &self.ciphers[ENGLISH];
        text.split_whitespace()
            .map(|w| {
                inverse
                    .get(w)
                    .map(|&c| english[c].as_str())
                    .ok_or_else(|| Error::Data(format!("`{w}` is not a `{lang}` word")))
            })
            .collect::<Result<Vec<_>>>()
            .map(|w| w.join(" "))
    }

    /// Writes every corpus file into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<()> {
        use files::*;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = CorpusManifest {
            seed: self.seed,
            trained_languages: self.trained_languages(),
            spec: self.spec.clone(),
        };
        write_text(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        write_text(&dir.join(VOCAB), &self.vocab.to_tsv())?;
        write_text(&dir.join(CIPHERS), &(serde_json::to_string(&self.ciphers)? + "\n"))?;
        write_text(&dir.join(BITEXT), &bitext_to_tsv(&self.train))?;
        write_text(&dir.join(HELDOUT), &bitext_to_tsv(&self.heldout))?;
        write_text(&dir.join(COLLECTION), &collection_to_tsv(&self.collection))?;
        write_text(&dir.join(QUERIES), &queries_to_tsv(&self.queries))?;
        write_qrels(&dir.join(QRELS), &self.qrels)?;
        write_text(&dir.join(GROUPS), &self.groups.to_jsonl()?)?;
        if self.spec.zero_shot_language.is_some() {
            write_text(
                &dir.join(ZEROSHOT_COLLECTION),
                &collection_to_tsv(&self.zero_shot_collection),
            )?;
            write_text(&dir.join(ZEROSHOT_QRELS), &qrels_to_string(&self.zero_shot_qrels))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{teacher_query_embed, TeacherProvider};

    fn small() -> CipherSpec {
        CipherSpec {
            train_pairs: 50,
            heldout_pairs: 10,
            queries: 30,
            ..CipherSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic_byte_for_byte() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_cipher_corpus(&small(), 5).unwrap().write(a.path()).unwrap();
        gen_cipher_corpus(&small(), 5).unwrap().write(b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 11);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap(),
                "{n:?}"
            );
        }
        assert_ne!(
            gen_cipher_corpus(&small(), 6).unwrap(),
            gen_cipher_corpus(&small(), 5).unwrap()
        );
        let m = CorpusManifest::load(a.path()).unwrap();
        assert_eq!((m.seed, m.spec), (5, small()));
        assert_eq!(m.trained_languages, ["en", "xa", "xb", "xc"]);
    }

    #[test]
    fn every_language_deciphers_to_its_english_source() {
        let c = gen_cipher_corpus(&small(), 1).unwrap();
        for p in c.train.iter().chain(&c.heldout) {
            assert_eq!(c.decipher(&p.source, &p.lang).unwrap(), p.english);
        }
        let english: HashMap<&str, &str> = c
            .collection
            .iter()
            .filter(|d| d.lang == ENGLISH)
            .map(|d| (&d.id[..5], d.text.as_str()))
            .collect();
        for d in c.collection.iter().chain(&c.zero_shot_collection) {
            assert_eq!(c.decipher(&d.text, &d.lang).unwrap(), english[&d.id[..5]]);
        }
    }

    #[test]
    fn ciphers_are_bijections_and_trained_blocks_are_disjoint() {
        let c = gen_cipher_corpus(&small(), 2).unwrap();
        let mut all = std::collections::HashSet::new();
        for (lang, forms) in &c.ciphers {
            let distinct: std::collections::HashSet<_> = forms.iter().collect();
            assert_eq!(distinct.len(), forms.len(), "{lang}");
            if lang != "zz" {
                assert!(forms.iter().all(|f| all.insert(f.clone())));
            }
            assert!(forms.iter().all(|f| c.vocab.id(f) != crate::corpus::vocab::UNK_ID));
        }
        assert_eq!(c.vocab.words().len(), 4 * 200);
        assert_eq!(c.ciphers["en"][17], "en017");
    }

    #[test]
    fn cardinalities_and_parallel_qrels() {
        let spec = small();
        let c = gen_cipher_corpus(&spec, 3).unwrap();
        assert_eq!(spec.n_docs(), 200);
        assert_eq!(c.collection.len(), 200 * 4);
        assert_eq!(c.zero_shot_collection.len(), 200);
        assert_eq!(c.train.len(), 4 * 50);
        assert_eq!(c.heldout.len(), 4 * 10);
        for q in &c.queries {
            let groups = c.groups.get(&q.id);
            assert_eq!(groups.len(), spec.docs_per_topic);
            for g in groups {
                let langs: Vec<&str> = g.iter().map(|(_, l)| l.as_str()).collect();
                assert_eq!(langs, ["en", "xa", "xb", "xc"]);
            }
            assert_eq!(c.qrels.num_relevant(&q.id), 4 * spec.docs_per_topic);
            assert_eq!(c.zero_shot_qrels.num_relevant(&q.id), spec.docs_per_topic);
        }
    }

    #[test]
    fn too_small_vocab_is_a_config_error() {
        let spec = CipherSpec {
            vocab_size: 150,
            ..CipherSpec::default()
        };
        assert!(matches!(gen_cipher_corpus(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn synthetic_teacher_separates_relevant_documents() {
        let c = gen_cipher_corpus(&CipherSpec::default(), 11).unwrap();
        let t = TeacherProvider::synthetic(32, 11, "cipher").unwrap();
        let docs: Vec<&Document> = c.collection.iter().filter(|d| d.lang == ENGLISH).collect();
        let mut rng = stream(0, "separability");
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>();
        let mut wins = 0;
        for q in &c.queries {
            let qv = teacher_query_embed(&q.text, &t).unwrap();
            let rel: Vec<_> = docs.iter().filter(|d| c.qrels.grade(&q.id, &d.id) > 0).collect();
            let non: Vec<_> = docs.iter().filter(|d| c.qrels.grade(&q.id, &d.id) == 0).collect();
            let r = rel.choose(&mut rng).unwrap();
            let n = non.choose(&mut rng).unwrap();
            if dot(&qv, &t.embed_document(&r.text).unwrap()) > dot(&qv, &t.embed_document(&n.text).unwrap()) {
                wins += 1;
            }
        }
        assert!(
            wins as f64 >= 0.95 * c.queries.len() as f64,
            "{wins}/{}",
            c.queries.len()
        );
    }
}
