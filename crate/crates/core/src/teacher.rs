//! Frozen teacher embeddings: the targets the student is distilled towards
//! and the query vectors used at search time.
//!
//! Two providers exist. The synthetic one is a hashed bag of tokens: every
//! whitespace token maps (through a salted hash) to a pseudorandom unit
//! vector, the vectors are summed and the sum is L2-normalized. The
//! file-backed one serves precomputed vectors keyed by raw text.
//!
//! Embedding file layout (little-endian):
//!
//! ```text
//! "SPDE", u32 dim, u32 section_count
//! per section: tag byte b'D' | b'Q', u64 record_count
//!   per record: u32 key_len, UTF-8 key, dim × f32
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::binio::{put_u32, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPDE";
const DOC_TAG: u8 = b'D';
const QUERY_TAG: u8 = b'Q';

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherProvider {
    Synthetic { dim: usize, seed: u64, salt: String },
    File(EmbeddingTable),
}

/// Document and query vectors loaded from an embedding file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub docs: BTreeMap<String, Vec<f32>>,
    pub queries: BTreeMap<String, Vec<f32>>,
}

impl TeacherProvider {
    pub fn synthetic(dim: usize, seed: u64, salt: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("teacher dimension must be positive".into()));
        }
        Ok(Self::Synthetic {
            dim,
            seed,
            salt: salt.into(),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Synthetic { dim, .. } => *dim,
            Self::File(t) => t.dim,
        }
    }

    /// Document-side embedding g_D of English text.
    pub fn embed_document(&self, text: &str) -> Result<Vec<f32>> {
        match self {
            Self::Synthetic { .. } => synthetic_embed(text, self),
            Self::File(t) => t
                .docs
                .get(text)
                .cloned()
                .ok_or_else(|| Error::MissingKey(text.to_string())),
        }
    }
}

/// Pseudorandom unit vector for one token; a pure function of
/// `(seed, salt, token)`.
fn token_vector(dim: usize, seed: u64, salt: &str, token: &str) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((salt.len() as u64).to_le_bytes());
    h.update(salt.as_bytes());
    h.update(token.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn synthetic_embed(text: &str, provider: &TeacherProvider) -> Result<Vec<f32>> {
    let TeacherProvider::Synthetic { dim, seed, salt } = provider else {
        return Err(Error::Contract("synthetic_embed needs a synthetic teacher".into()));
    };
    let mut sum = vec![0.0f64; *dim];
    let mut any = false;
    for tok in text.split_whitespace() {
        any = true;
        for (s, t) in sum.iter_mut().zip(token_vector(*dim, *seed, salt, tok)) {
            *s += t;
        }
    }
    if !any {
        return Err(Error::Contract("cannot embed empty text".into()));
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numeric(format!("teacher embedding of {text:?} has norm {norm}")));
    }
    Ok(sum.into_iter().map(|x| (x / norm) as f32).collect())
}

/// Query-side embedding g_E. The synthetic teacher shares one map for both
/// sides; a file-backed teacher reads its query section.
pub fn teacher_query_embed(query: &str, provider: &TeacherProvider) -> Result<Vec<f32>> {
    match provider {
        TeacherProvider::Synthetic { .. } => synthetic_embed(query, provider),
        TeacherProvider::File(t) => t
            .queries
            .get(query)
            .cloned()
            .ok_or_else(|| Error::MissingKey(query.to_string())),
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.dim)?;
        put_u32(&mut out, 2)?;
        for (tag, map) in [(DOC_TAG, &self.docs), (QUERY_TAG, &self.queries)] {
            out.push(tag);
            out.extend_from_slice(&(map.len() as u64).to_le_bytes());
            for (key, v) in map {
                if v.len() != self.dim {
                    return Err(Error::Format(format!(
                        "vector for `{key}` has {} values, expected {}",
                        v.len(),
                        self.dim
                    )));
                }
                put_u32(&mut out, key.len())?;
                out.extend_from_slice(key.as_bytes());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an embedding file (bad magic)".into()));
        }
        let dim = r.u32()? as usize;
        let sections = r.u32()?;
        let mut table = Self::new(dim);
        for _ in 0..sections {
            let tag = r.u8()?;
            let map = match tag {
                DOC_TAG => &mut table.docs,
                QUERY_TAG => &mut table.queries,
                t => return Err(Error::Format(format!("unknown section tag {t:#04x}"))),
            };
            let count = r.u64()?;
            for _ in 0..count {
                let len = r.u32()? as usize;
                let key = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::Format("record key is not UTF-8".into()))?
                    .to_string();
                let v = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                if map.insert(key.clone(), v).is_some() {
                    return Err(Error::Conflict(format!("duplicate embedding key `{key}`")));
                }
            }
        }
        if !r.done() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

pub fn load_teacher_file(path: &Path) -> Result<TeacherProvider> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(TeacherProvider::File(EmbeddingTable::from_bytes(&bytes)?))
}
