//! The student document encoder: token encoder, language-conditioned soft
//! prompts and a cross-attention decoder, mean-pooled to one vector.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod prompt;

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::corpus::vocab::{LANG_TOKEN_BASE, MAX_LANGUAGES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{InitScheme, ParamStore, Tensor};

pub use config::{SpdConfig, Variant};
pub use layers::{block_parameter_count, BlockNames};
pub use prompt::{assemble_prompt, synthesize_zero_shot_prompt, LanguageVectors, PromptBank};

pub const TOKEN_EMBEDDING: &str = "encoder.token_embedding";
pub const POSITION_EMBEDDING: &str = "encoder.position_embedding";

fn encoder_prefix(i: usize) -> String {
    format!("encoder.layer{i:02}")
}

fn decoder_prefix(i: usize) -> String {
    format!("decoder.layer{i:02}")
}

const DECODER_BLOCK: &str = "decoder.block";

fn temporal_name(step: usize) -> String {
    format!("decoder.temporal{step:02}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdModel<T> {
    config: SpdConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> SpdModel<T> {
    /// Fresh model with every parameter seeded from `(seed, name)`.
    pub fn new(config: SpdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new(seed);
        let d = config.dim;
        p.init(TOKEN_EMBEDDING, vec![config.vocab_size, d], InitScheme::XavierUniform)?;
        p.init(
            POSITION_EMBEDDING,
            vec![config.max_seq_len, d],
            InitScheme::Normal { mean: 0.0, std: 0.02 },
        )?;
        for i in 0..config.encoder_layers {
            layers::init_block(&mut p, &encoder_prefix(i), &config)?;
        }
        if config.variant != Variant::EncoderOnly {
            p.init(
                prompt::SHARED_PROMPT,
                vec![config.prompt_len, d],
                InitScheme::XavierUniform,
            )?;
            for lang in &config.languages {
                init_language_vectors(&mut p, lang, &config)?;
            }
        }
        match config.variant {
            Variant::Spd => {
                for i in 0..config.decoder_layers {
                    layers::init_block(&mut p, &decoder_prefix(i), &config)?;
                }
            }
            Variant::Utspd => {
                layers::init_block(&mut p, DECODER_BLOCK, &config)?;
                for n in 0..config.decoder_layers {
                    p.init(&temporal_name(n), vec![config.prompt_len, d], InitScheme::Constant(0.0))?;
                }
            }
            Variant::EncoderOnly => {}
        }
        Ok(Self { config, params: p })
    }

    /// Assembles a model from loaded parameters, checking every expected
    /// tensor is present with the right shape.
    pub fn from_parts(config: SpdConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = SpdModel::<T>::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SpdConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> SpdModel<U> {
        SpdModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn prompt_bank(&self) -> Result<PromptBank<T>> {
        if self.config.variant == Variant::EncoderOnly {
            return Err(Error::Config("encoder-only models have no prompt bank".into()));
        }
        PromptBank::from_store(&self.params, &self.config.languages)
    }

    /// Records the token encoder on a tape; see [`record_encoder_with`].
    pub fn record_encoder<'a>(&'a self, tape: &mut Tape<'a, T>, ids: &[usize], lang: &str) -> Result<Var> {
        record_encoder_with(&self.config, &self.params, tape, ids, lang)
    }

    /// Records the full document embedding; see [`record_embedding_with`].
    pub fn record_embedding<'a>(&'a self, tape: &mut Tape<'a, T>, ids: &[usize], lang: &str) -> Result<Var> {
        record_embedding_with(&self.config, &self.params, tape, ids, lang)
    }

    /// Document embedding for this model's variant.
    pub fn embed(&self, ids: &[usize], lang: &str) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let v = self.record_embedding(&mut tape, ids, lang)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Contextualized token representations, language token last.
    pub fn encode_tokens(&self, ids: &[usize], lang: &str) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.record_encoder(&mut tape, ids, lang)?;
        Ok(tape.value(v).clone())
    }

    fn expect_variant(&self, v: Variant) -> Result<()> {
        if self.config.variant != v {
            return Err(Error::Config(format!(
                "model variant is {:?}, operation needs {v:?}",
                self.config.variant
            )));
        }
        Ok(())
    }

    pub fn embed_document(&self, ids: &[usize], lang: &str) -> Result<Vec<T>> {
        self.expect_variant(Variant::Spd)?;
        self.embed(ids, lang)
    }

    pub fn embed_document_utspd(&self, ids: &[usize], lang: &str) -> Result<Vec<T>> {
        self.expect_variant(Variant::Utspd)?;
        self.embed(ids, lang)
    }

    pub fn embed_encoder_only(&self, ids: &[usize], lang: &str) -> Result<Vec<T>> {
        self.expect_variant(Variant::EncoderOnly)?;
        self.embed(ids, lang)
    }

    /// Adds an unseen language: its prompt vectors are the mean of every
    /// trained language's vectors, and its language-token embedding is the
    /// mean of the trained language-token rows. Nothing else changes.
    pub fn add_zero_shot_language(&mut self, new_lang: &str) -> Result<()> {
        let bank = self.prompt_bank()?;
        if self.config.languages.iter().any(|l| l == new_lang) {
            return Err(Error::Conflict(format!("language `{new_lang}` is already configured")));
        }
        if self.config.languages.len() >= MAX_LANGUAGES {
            return Err(Error::Config(format!(
                "at most {MAX_LANGUAGES} languages are supported"
            )));
        }
        let extended = synthesize_zero_shot_prompt(&bank, new_lang)?;
        let lv = extended.get(new_lang)?.clone();

        let k = self.config.languages.len();
        let table = self.params.get_mut(TOKEN_EMBEDDING)?;
        let d = table.cols();
        let mut row = vec![T::zero(); d];
        for i in 0..k {
            for (a, &b) in row.iter_mut().zip(table.row(LANG_TOKEN_BASE + i)) {
                *a += b;
            }
        }
        let kt = T::from_usize(k).expect("language count fits scalar");
        let target = LANG_TOKEN_BASE + k;
        for (j, x) in row.into_iter().enumerate() {
            table.data_mut()[target * d + j] = x / kt;
        }

        self.params.insert(prompt::u_name(new_lang), lv.u)?;
        self.params.insert(prompt::v_name(new_lang), lv.v)?;
        self.config.languages.push(new_lang.to_string());
        Ok(())
    }
}

/// Records the token encoder on a tape; the language token is appended
/// as the final input. Returns `(len(ids)+1) × d`.
pub fn record_encoder_with<'a, T: Scalar>(
    config: &SpdConfig,
    params: &'a ParamStore<T>,
    tape: &mut Tape<'a, T>,
    ids: &[usize],
    lang: &str,
) -> Result<Var> {
    let ln_eps = T::from_f64_lossy(config.ln_eps);
    let n = ids.len() + 1;
    if n > config.max_seq_len {
        return Err(Error::Contract(format!(
            "{} tokens plus the language token exceed max_seq_len {}",
            ids.len(),
            config.max_seq_len
        )));
    }
    let mut full = Vec::with_capacity(n);
    full.extend_from_slice(ids);
    full.push(config.language_token(lang)?);
    let table = tape.param(params, TOKEN_EMBEDDING)?;
    let tokens = tape.gather_rows(table, &full)?;
    let positions = tape.param(params, POSITION_EMBEDDING)?;
    let positions = tape.slice_rows(positions, 0, n)?;
    let mut x = tape.add(tokens, positions)?;
    for i in 0..config.encoder_layers {
        let names = BlockNames::new(&encoder_prefix(i), config.heads);
        x = layers::attention_block(tape, params, &names, x, x, ln_eps)?;
    }
    Ok(x)
}

/// Records the full document embedding (variant-dispatched); returns a
/// length-`d` vector.
pub fn record_embedding_with<'a, T: Scalar>(
    config: &SpdConfig,
    params: &'a ParamStore<T>,
    tape: &mut Tape<'a, T>,
    ids: &[usize],
    lang: &str,
) -> Result<Var> {
    config.language_index(lang)?;
    let ln_eps = T::from_f64_lossy(config.ln_eps);
    let tokens = record_encoder_with(config, params, tape, ids, lang)?;
    let hidden = match config.variant {
        Variant::EncoderOnly => tokens,
        Variant::Spd => {
            let mut h = prompt::record_prompt(tape, params, lang)?;
            for i in 0..config.decoder_layers {
                let names = BlockNames::new(&decoder_prefix(i), config.heads);
                h = layers::attention_block(tape, params, &names, h, tokens, ln_eps)?;
            }
            h
        }
        Variant::Utspd => {
            let names = BlockNames::new(DECODER_BLOCK, config.heads);
            let mut h = prompt::record_prompt(tape, params, lang)?;
            for n in 0..config.decoder_layers {
                let out = layers::attention_block(tape, params, &names, h, tokens, ln_eps)?;
                let tau = tape.param(params, &temporal_name(n))?;
                h = tape.add(tau, out)?;
            }
            h
        }
    };
    Ok(tape.mean_rows(hidden))
}

fn init_language_vectors<T: Scalar>(p: &mut ParamStore<T>, lang: &str, config: &SpdConfig) -> Result<()> {
    let near_one = InitScheme::Normal { mean: 1.0, std: 0.02 };
    p.init(&prompt::u_name(lang), vec![config.prompt_len], near_one)?;
    p.init(&prompt::v_name(lang), vec![config.dim], near_one)
}

/// One decoder layer applied eagerly: `H_prev` (l×d) attends over `tokens`
/// (n×d) using the block stored under `prefix`.
pub fn decoder_layer<T: Scalar>(
    h_prev: &Tensor<T>,
    tokens: &Tensor<T>,
    params: &ParamStore<T>,
    prefix: &str,
    heads: usize,
    ln_eps: f64,
) -> Result<Tensor<T>> {
    if h_prev.cols() != tokens.cols() || h_prev.shape().len() != 2 || tokens.shape().len() != 2 {
        return Err(Error::shape(
            "decoder_layer",
            format!("queries {:?}, tokens {:?}", h_prev.shape(), tokens.shape()),
        ));
    }
    let mut tape = Tape::new();
    let h = tape.constant(h_prev.clone());
    let t = tape.constant(tokens.clone());
    let names = BlockNames::new(prefix, heads);
    let out = layers::attention_block(&mut tape, params, &names, h, t, T::from_f64_lossy(ln_eps))?;
    Ok(tape.value(out).clone())
}

/// Mean over the rows of an `l×d` matrix.
pub fn mean_pool<T: Scalar>(h: &Tensor<T>) -> Vec<T> {
    let mut tape = Tape::new();
    let v = tape.constant(h.clone());
    let m = tape.mean_rows(v);
    tape.value(m).data().to_vec()
}

/// Exact per-component parameter counts, read from the model's tensors.
pub fn count_parameters<T: Scalar>(model: &SpdModel<T>) -> BTreeMap<String, usize> {
    let p = &model.params;
    let mut out = BTreeMap::new();
    out.insert("encoder".to_string(), p.count_with_prefix("encoder."));
    match model.config.variant {
        Variant::EncoderOnly => {}
        Variant::Spd => {
            out.insert("prompt_bank".to_string(), p.count_with_prefix("prompt."));
            out.insert("decoder".to_string(), p.count_with_prefix("decoder.layer"));
        }
        Variant::Utspd => {
            out.insert("prompt_bank".to_string(), p.count_with_prefix("prompt."));
            out.insert("decoder_block".to_string(), p.count_with_prefix(DECODER_BLOCK));
            out.insert("temporal".to_string(), p.count_with_prefix("decoder.temporal"));
        }
    }
    let total = out.values().sum();
    out.insert("total".to_string(), total);
    out
}

/// The same counts from the closed-form formulae, without building a model.
pub fn expected_parameter_counts(config: &SpdConfig) -> BTreeMap<String, usize> {
    let (d, l, k) = (config.dim, config.prompt_len, config.languages.len());
    let block = block_parameter_count(config);
    let mut out = BTreeMap::new();
    out.insert(
        "encoder".to_string(),
        config.vocab_size * d + config.max_seq_len * d + config.encoder_layers * block,
    );
    let bank = l * d + k * (l + d);
    match config.variant {
        Variant::EncoderOnly => {}
        Variant::Spd => {
            out.insert("prompt_bank".to_string(), bank);
            out.insert("decoder".to_string(), config.decoder_layers * block);
        }
        Variant::Utspd => {
            out.insert("prompt_bank".to_string(), bank);
            out.insert("decoder_block".to_string(), block);
            out.insert("temporal".to_string(), config.decoder_layers * l * d);
        }
    }
    let total = out.values().sum();
    out.insert("total".to_string(), total);
    out
}
