//! Distillation training: the student's embedding of a sentence in any
//! language is pulled towards the frozen teacher's embedding of its English
//! translation with a mean squared error, optimized by Adam.
//!
//! Every batch holds `B` pairs from each language in config order. Each
//! language has its own stream over its pairs, reshuffled (seeded) on every
//! pass, so batch contents are a pure function of `(seed, step)`.
//! Per-example gradients are computed in parallel and summed in batch
//! order, which keeps results independent of the worker count.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::corpus::vocab::{tokenize, Vocab};
use crate::corpus::BitextPair;
use crate::error::{Error, Result};
use crate::model::{checkpoint, SpdModel};
use crate::scalar::Scalar;
use crate::teacher::TeacherProvider;
use crate::tensor::{derive_seed, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pairs per language per batch.
    pub batch_per_language: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Token budget per input including the language token; defaults to the
    /// model's `max_seq_len`.
    pub max_seq_len: Option<usize>,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_per_language: 4,
            learning_rate: 1e-3,
            epochs: 1,
            adam: AdamConfig::default(),
            max_seq_len: None,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_per_language == 0 {
            return Err(Error::Config("batch_per_language must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config("adam needs 0 ≤ β < 1 and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub per_lang: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Contract(format!(
                    "trace step {} after {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out += &serde_json::to_string(r)?;
            out.push('\n');
        }
        Ok(out)
    }

    /// Mean loss of the steps in `[from, to)` (by position).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.records[range];
        s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64
    }
}

/// Squared L2 distance per pair, averaged over pairs.
pub fn distill_loss(student: &[Vec<f32>], teacher: &[Vec<f32>]) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::shape(
            "distill_loss",
            format!("{} student vs {} teacher vectors", student.len(), teacher.len()),
        ));
    }
    let mut sum = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() {
            return Err(Error::shape("distill_loss", format!("dims {} vs {}", s.len(), t.len())));
        }
        sum += s
            .iter()
            .zip(t)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>();
    }
    Ok(sum / student.len() as f64)
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update with bias correction. Parameters without a gradient
/// still count as seeing a zero gradient. Non-finite gradients abort the
/// step before anything changes.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamConfig,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c = |x: f64| T::from_f64_lossy(x);
    let (b1, b2, eps) = (c(hyper.beta1), c(hyper.beta2), c(hyper.eps));
    let one = T::one();
    let bc1 = c(1.0 - hyper.beta1.powi(t));
    let bc2 = c(1.0 - hyper.beta2.powi(t));
    let lr = c(lr);
    for (name, p) in params.iter_mut() {
        let n = p.len();
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
        let g = grads.get(name);
        for i in 0..n {
            let gi = g.map_or(T::zero(), |g| g[i]);
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// A tokenized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub lang: String,
    pub ids: Vec<usize>,
    /// Key into the teacher cache.
    pub english: String,
}

/// Per-language pass-wise shuffled streams over examples.
#[derive(Debug)]
pub struct Streams {
    languages: Vec<String>,
    members: Vec<Vec<usize>>,
    seed: u64,
    orders: Mutex<HashMap<(usize, usize), Vec<usize>>>,
}

impl Streams {
    /// `examples` are grouped by language; every language must have at least
    /// one example.
    pub fn new(languages: &[String], examples: &[Example], seed: u64) -> Result<Self> {
        let mut members = vec![Vec::new(); languages.len()];
        for (i, e) in examples.iter().enumerate() {
            let k = languages
                .iter()
                .position(|l| *l == e.lang)
                .ok_or_else(|| Error::Config(format!("language `{}` is not configured in the model", e.lang)))?;
            members[k].push(i);
        }
        if let Some(k) = members.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!(
                "no training pairs for language `{}`",
                languages[k]
            )));
        }
        Ok(Self {
            languages: languages.to_vec(),
            members,
            seed,
            orders: Mutex::new(HashMap::new()),
        })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    /// Steps needed for the largest language to see all its pairs once.
    pub fn steps_per_epoch(&self, b: usize) -> usize {
        self.members.iter().map(Vec::len).max().unwrap_or(0).div_ceil(b)
    }

    /// Example index at position `pos` of language `k`'s endless stream.
    fn at(&self, k: usize, pos: usize) -> usize {
        let n = self.members[k].len();
        let (pass, off) = (pos / n, pos % n);
        let mut orders = self.orders.lock().expect("stream cache lock");
        let order = orders.entry((k, pass)).or_insert_with(|| {
            let mut o = self.members[k].clone();
            let name = format!("stream/{}/{pass}", self.languages[k]);
            o.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &name)));
            o
        });
        order[off]
    }
}

/// Example indices of batch `step`: `b` per language, languages in order.
pub fn build_batch(streams: &Streams, b: usize, step: usize) -> Vec<usize> {
    (0..streams.languages.len())
        .flat_map(|k| (0..b).map(move |i| (k, step * b + i)))
        .map(|(k, pos)| streams.at(k, pos))
        .collect()
}

/// Head-keeps at most `budget − 1` tokens (one slot is the language token).
pub fn truncate(mut ids: Vec<usize>, budget: usize) -> Vec<usize> {
    ids.truncate(budget.saturating_sub(1));
    ids
}

pub fn prepare_examples(pairs: &[BitextPair], vocab: &Vocab, budget: usize) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|p| {
            let ids = truncate(tokenize(&p.source, vocab), budget);
            if ids.is_empty() {
                return Err(Error::Data(format!(
                    "empty {} sentence paired with {:?}",
                    p.lang, p.english
                )));
            }
            Ok(Example {
                lang: p.lang.clone(),
                ids,
                english: p.english.clone(),
            })
        })
        .collect()
}

/// Teacher vectors for every distinct English sentence, computed once.
pub fn teacher_cache(examples: &[Example], teacher: &TeacherProvider) -> Result<HashMap<String, Vec<f32>>> {
    let mut keys: Vec<&str> = examples.iter().map(|e| e.english.as_str()).collect();
    keys.sort_unstable();
    keys.dedup();
    let vectors: Vec<Vec<f32>> = keys
        .par_iter()
        .map(|k| teacher.embed_document(k))
        .collect::<Result<_>>()?;
    Ok(keys.into_iter().map(str::to_string).zip(vectors).collect())
}

/// Loss and parameter gradients of one example: `|f(s) − g(e)|²`.
pub fn example_gradient<T: Scalar>(model: &SpdModel<T>, ex: &Example, target: &[f32]) -> Result<(f64, Gradients<T>)> {
    let mut tape = Tape::new();
    let emb = model.record_embedding(&mut tape, &ex.ids, &ex.lang)?;
    let target: Vec<T> = target.iter().map(|&x| T::from_f64_lossy(x as f64)).collect();
    let loss = tape.sq_error_sum(emb, &target)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    Ok((value, tape.backward(loss)?))
}

/// Training stopped early; the trace up to the failure is kept.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub trace: LossTrace,
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Self {
        a.error
    }
}

impl From<Error> for TrainAbort {
    fn from(error: Error) -> Self {
        Self {
            error,
            trace: LossTrace::default(),
        }
    }
}

/// Runs `config.epochs` epochs of distillation on `model` in place. With
/// `checkpoint_dir`, writes `step-NNNNNN.spd` every `checkpoint_every`
/// steps and `final.spd` at the end.
pub fn train<T: Scalar>(
    model: &mut SpdModel<T>,
    teacher: &TeacherProvider,
    vocab: &Vocab,
    pairs: &[BitextPair],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<LossTrace, TrainAbort> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()).into());
    }
    if teacher.dim() != model.config().dim {
        return Err(Error::Config(format!(
            "teacher dim {} differs from model dim {}",
            teacher.dim(),
            model.config().dim
        ))
        .into());
    }
    let budget = config
        .max_seq_len
        .unwrap_or(model.config().max_seq_len)
        .min(model.config().max_seq_len);
    let examples = prepare_examples(pairs, vocab, budget)?;
    let streams = Streams::new(&model.config().languages, &examples, config.seed)?;
    let cache = teacher_cache(&examples, teacher)?;
    let b = config.batch_per_language;
    let total = streams.steps_per_epoch(b) * config.epochs;
    let kb = (b * streams.languages().len()) as f64;

    let mut state = AdamState::default();
    let mut trace = LossTrace::default();
    for step in 0..total {
        let batch = build_batch(&streams, b, step);
        let results: Result<Vec<(f64, Gradients<T>)>> = batch
            .par_iter()
            .map(|&i| example_gradient(model, &examples[i], &cache[&examples[i].english]))
            .collect();
        let results = match results {
            Ok(r) => r,
            Err(error) => return Err(TrainAbort { error, trace }),
        };

        let mut grads = Gradients::default();
        let mut per_lang: BTreeMap<String, f64> = BTreeMap::new();
        let mut loss = 0.0;
        for (&i, (l, g)) in batch.iter().zip(&results) {
            grads.add_assign(g);
            loss += l;
            *per_lang.entry(examples[i].lang.clone()).or_default() += l / b as f64;
        }
        loss /= kb;
        let scale = T::from_f64_lossy(1.0 / kb);
        for g in grads.by_name.values_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
        if !loss.is_finite() {
            return Err(TrainAbort {
                error: Error::Numeric(format!("loss became {loss} at step {}", step + 1)),
                trace,
            });
        }
        trace.push(TraceRecord {
            step: step + 1,
            loss,
            per_lang,
        })?;
        if let Err(error) = adam_step(
            model.params_mut(),
            &grads,
            &mut state,
            config.learning_rate,
            config.adam,
        ) {
            return Err(TrainAbort { error, trace });
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && step + 1 < total {
                checkpoint::save(model, &dir.join(format!("step-{:06}.spd", step + 1)))?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        checkpoint::save(model, &dir.join("final.spd"))?;
    }
    Ok(trace)
}

/// Held-out agreement between student and teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    /// Mean squared L2 distance (the training loss on these pairs).
    pub loss: f64,
    pub mean_cosine: f64,
    pub pairs: usize,
}

pub fn evaluate_agreement<T: Scalar>(
    model: &SpdModel<T>,
    teacher: &TeacherProvider,
    vocab: &Vocab,
    pairs: &[BitextPair],
) -> Result<Agreement> {
    let examples = prepare_examples(pairs, vocab, model.config().max_seq_len)?;
    let cache = teacher_cache(&examples, teacher)?;
    let stats: Vec<(f64, f64)> = examples
        .par_iter()
        .map(|e| {
            let s: Vec<f64> = model.embed(&e.ids, &e.lang)?.iter().map(|x| x.to_f64_lossy()).collect();
            let t = &cache[&e.english];
            let sq: f64 = s.iter().zip(t).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            let dot: f64 = s.iter().zip(t).map(|(a, &b)| a * b as f64).sum();
            let ns = s.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nt = t.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
            Ok((sq, dot / (ns * nt)))
        })
        .collect::<Result<_>>()?;
    let n = stats.len() as f64;
    Ok(Agreement {
        loss: stats.iter().map(|s| s.0).sum::<f64>() / n,
        mean_cosine: stats.iter().map(|s| s.1).sum::<f64>() / n,
        pairs: stats.len(),
    })
}

/// Writes a trace as JSON lines.
pub fn write_trace(trace: &LossTrace, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(trace.to_jsonl()?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::cipher::{gen_cipher_corpus, CipherSpec};
    use crate::model::SpdConfig;
    use crate::tensor::{InitScheme, Tensor};
    use proptest::prelude::*;

    #[test]
    fn distill_loss_examples() {
        let a = vec![vec![1.0, 0.0]];
        assert_eq!(distill_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(distill_loss(&a, &[vec![0.0, 1.0]]).unwrap(), 2.0);
        // Squared distances 2 and 4.
        let s = vec![vec![1.0, 1.0], vec![2.0, 0.0]];
        let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(distill_loss(&s, &t).unwrap(), 3.0);
        assert!(matches!(distill_loss(&s, &t[..1]), Err(Error::Shape { .. })));
        assert!(matches!(distill_loss(&a, &[vec![0.0]]), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn distill_loss_is_nonnegative_and_order_free(
            rows in prop::collection::vec((prop::collection::vec(-3.0f32..3.0, 4), prop::collection::vec(-3.0f32..3.0, 4)), 1..10),
            rot in 0usize..10,
        ) {
            let (s, t): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
            let l = distill_loss(&s, &t).unwrap();
            prop_assert!(l >= 0.0);
            let k = rot % rows.len();
            let (mut s2, mut t2) = (s.clone(), t.clone());
            s2.rotate_left(k);
            t2.rotate_left(k);
            prop_assert!((distill_loss(&s2, &t2).unwrap() - l).abs() < 1e-9);
            prop_assert_eq!(distill_loss(&s, &s).unwrap(), 0.0);
        }
    }

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new(0);
        p.init("w", vec![1], InitScheme::Constant(x)).unwrap();
        p
    }

    fn grad_of(g: f64) -> Gradients<f64> {
        let mut grads = Gradients::default();
        grads.by_name.insert("w".into(), vec![g]);
        grads
    }

    #[test]
    fn adam_matches_a_hand_recurrence() {
        let (lr, h) = (0.1, AdamConfig::default());
        let mut p = scalar_store(1.0);
        let mut s = AdamState::default();
        let g = 0.5;
        let (mut m, mut v, mut w) = (0.0, 0.0, 1.0);
        for t in 1..=3 {
            adam_step(&mut p, &grad_of(g), &mut s, lr, h).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mhat / (vhat.sqrt() + 1e-8);
            assert!((p.get("w").unwrap().data()[0] - w).abs() < 1e-12);
        }
        // A constant positive gradient moves the parameter down by ≈ lr per step.
        assert!((w - 0.7).abs() < 1e-6);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters_and_counts_the_step() {
        let mut p = scalar_store(2.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad_of(0.0), &mut s, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 2.0);
        assert_eq!(s.step, 1);
        let err = adam_step(&mut p, &grad_of(f64::NAN), &mut s, 0.1, AdamConfig::default());
        assert!(err.unwrap_err().is_numeric());
        assert_eq!(s.step, 1);
    }

    fn examples(langs: &[&str], per: usize) -> (Vec<String>, Vec<Example>) {
        let l: Vec<String> = langs.iter().map(|s| s.to_string()).collect();
        let ex = l
            .iter()
            .flat_map(|lang| {
                (0..per).map(move |i| Example {
                    lang: lang.clone(),
                    ids: vec![20 + i],
                    english: format!("e{i}"),
                })
            })
            .collect();
        (l, ex)
    }

    #[test]
    fn batches_are_balanced_ordered_and_deterministic() {
        let (langs, ex) = examples(&["en", "xa", "xb"], 10);
        let s = Streams::new(&langs, &ex, 3).unwrap();
        let b = build_batch(&s, 4, 0);
        assert_eq!(b.len(), 12);
        for (k, chunk) in b.chunks(4).enumerate() {
            assert!(chunk.iter().all(|&i| ex[i].lang == langs[k]));
        }
        let again = Streams::new(&langs, &ex, 3).unwrap();
        assert_eq!(build_batch(&again, 4, 7), build_batch(&s, 4, 7));

        let (l1, e1) = examples(&["en"], 1);
        assert_eq!(build_batch(&Streams::new(&l1, &e1, 0).unwrap(), 1, 5), vec![0]);
    }

    #[test]
    fn every_pass_visits_each_example_once() {
        let (langs, ex) = examples(&["en"], 10);
        let s = Streams::new(&langs, &ex, 9).unwrap();
        for pass in 0..3 {
            let mut seen: Vec<usize> = (0..5).flat_map(|st| build_batch(&s, 2, pass * 5 + st)).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn stream_errors() {
        let (langs, ex) = examples(&["en"], 2);
        let two = vec!["en".to_string(), "xa".to_string()];
        assert!(matches!(Streams::new(&two, &ex, 0), Err(Error::Data(_))));
        assert!(matches!(Streams::new(&langs[..0], &ex, 0), Err(Error::Config(_))));
    }

    #[test]
    fn truncation_keeps_the_head() {
        assert_eq!(truncate(vec![1, 2, 3, 4, 5], 4), vec![1, 2, 3]);
        assert_eq!(truncate(vec![1, 2], 4), vec![1, 2]);
    }

    fn tiny_setup() -> (SpdModel<f32>, TeacherProvider, Vocab, Vec<BitextPair>) {
        let spec = CipherSpec {
            languages: vec!["xa".into()],
            include_english: false,
            zero_shot_language: None,
            train_pairs: 64,
            heldout_pairs: 0,
            queries: 1,
            ..CipherSpec::default()
        };
        let corpus = gen_cipher_corpus(&spec, 4).unwrap();
        let mut c = SpdConfig::desk(corpus.vocab.size(), vec!["xa".into()]);
        c.dim = 16;
        c.heads = 2;
        c.ffn_dim = 32;
        c.prompt_len = 4;
        c.decoder_layers = 1;
        c.encoder_layers = 1;
        let model = SpdModel::new(c, 1).unwrap();
        let teacher = TeacherProvider::synthetic(16, 4, "tiny").unwrap();
        (model, teacher, corpus.vocab, corpus.train)
    }

    #[test]
    fn tiny_fixture_converges_and_is_reproducible() {
        let (mut model, teacher, vocab, pairs) = tiny_setup();
        let config = TrainConfig {
            epochs: 30,
            batch_per_language: 8,
            learning_rate: 3e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let before = evaluate_agreement(&model, &teacher, &vocab, &pairs).unwrap().loss;
        let trace = train(&mut model, &teacher, &vocab, &pairs, &config, None).unwrap();
        let after = evaluate_agreement(&model, &teacher, &vocab, &pairs).unwrap().loss;
        assert_eq!(trace.records.len(), 30 * 8);
        assert!(after < 0.25 * before, "loss {before} -> {after}");
        assert!(trace.records.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));

        let (mut again, ..) = tiny_setup();
        let trace2 = train(&mut again, &teacher, &vocab, &pairs, &config, None).unwrap();
        assert_eq!(trace, trace2);
        assert_eq!(
            checkpoint::to_bytes(&model).unwrap(),
            checkpoint::to_bytes(&again).unwrap()
        );
    }

    #[test]
    fn empty_corpus_and_unknown_language_are_rejected() {
        let (mut model, teacher, vocab, pairs) = tiny_setup();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut model, &teacher, &vocab, &[], &cfg, None).map_err(Error::from),
            Err(Error::Data(_))
        ));
        let mut stray = pairs[..2].to_vec();
        stray[1].lang = "qq".into();
        assert!(matches!(
            train(&mut model, &teacher, &vocab, &stray, &cfg, None).map_err(Error::from),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn teacher_receives_no_gradient() {
        // The target is a plain constant: only student parameters appear.
        let (model, teacher, vocab, pairs) = tiny_setup();
        let ex = prepare_examples(&pairs[..1], &vocab, 32).unwrap();
        let target = teacher.embed_document(&ex[0].english).unwrap();
        let (_, g) = example_gradient(&model, &ex[0], &target).unwrap();
        assert!(g.by_name.keys().all(|n| model.params().contains(n)));
        let _ = Tensor::<f32>::scalar(0.0);
    }

    #[test]
    fn checkpoints_are_written_at_interval_and_end() {
        let (mut model, teacher, vocab, pairs) = tiny_setup();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            batch_per_language: 16,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        train(&mut model, &teacher, &vocab, &pairs, &cfg, Some(dir.path())).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["final.spd", "step-000002.spd"]);
        let back = checkpoint::load(&dir.path().join("final.spd")).unwrap();
        assert_eq!(
            checkpoint::to_bytes(&back).unwrap(),
            checkpoint::to_bytes(&model).unwrap()
        );
    }
}
