//! Whitespace tokenization over a fixed vocabulary with reserved ids.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Id of padding (never emitted by the tokenizer).
pub const PAD_ID: usize = 0;
/// Id every out-of-vocabulary token maps to.
pub const UNK_ID: usize = 1;
/// First language-code token; language `i` of a model uses `LANG_TOKEN_BASE + i`.
pub const LANG_TOKEN_BASE: usize = 2;
pub const MAX_LANGUAGES: usize = 16;
/// First id available to surface words.
pub const FIRST_WORD_ID: usize = LANG_TOKEN_BASE + MAX_LANGUAGES;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary assigning ids from [`FIRST_WORD_ID`] in order.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            words: Vec::new(),
            ids: HashMap::new(),
        };
        for w in words {
            let w = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary entry {w:?}")));
            }
            let id = FIRST_WORD_ID + v.words.len();
            if v.ids.insert(w.clone(), id).is_some() {
                return Err(Error::Conflict(format!("duplicate vocabulary entry `{w}`")));
            }
            v.words.push(w);
        }
        Ok(v)
    }

    /// Table size a model needs: reserved ids plus every word.
    pub fn size(&self) -> usize {
        FIRST_WORD_ID + self.words.len()
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        id.checked_sub(FIRST_WORD_ID)
            .and_then(|i| self.words.get(i))
            .map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `id<TAB>word` per line, word ids only.
    pub fn to_tsv(&self) -> String {
        self.words
            .iter()
            .enumerate()
            .map(|(i, w)| format!("{}\t{w}\n", FIRST_WORD_ID + i))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let parse = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let (id, word) = line
                .split_once('\t')
                .ok_or_else(|| parse("expected `id<TAB>word`".into()))?;
            let id: usize = id.parse().map_err(|_| parse(format!("bad id {id:?}")))?;
            if id != FIRST_WORD_ID + words.len() {
                return Err(parse(format!("ids must be consecutive from {FIRST_WORD_ID}")));
            }
            words.push(word.to_string());
        }
        Self::new(words)
    }
}

/// Splits on whitespace and maps each token through `vocab`.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<usize> {
    text.split_whitespace().map(|t| vocab.id(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        // Place `a` at FIRST_WORD_ID + 5 and `b` right after it.
        let mut words: Vec<String> = (0..5).map(|i| format!("pad{i}")).collect();
        words.push("a".into());
        words.push("b".into());
        let v = Vocab::new(words).unwrap();
        let a = FIRST_WORD_ID + 5;
        assert_eq!(tokenize("a b a", &v), vec![a, a + 1, a]);
        assert_eq!(tokenize("a zzz", &v), vec![a, UNK_ID]);
        assert!(tokenize("", &v).is_empty());
    }

    #[test]
    fn reserved_ranges_do_not_overlap() {
        assert!(UNK_ID < LANG_TOKEN_BASE);
        assert_eq!(FIRST_WORD_ID, LANG_TOKEN_BASE + MAX_LANGUAGES);
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocab::new(["x", "y", "z"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        std::fs::write(&p, v.to_tsv()).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        assert!(Vocab::new(["x", "x"]).is_err());
    }
}
