//! Decomposed soft prompts: one shared `l×d` matrix and, per language, a
//! rank-one mask `u vᵀ`. A language's prompt is `shared ⊙ (u vᵀ)`.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

pub const SHARED_PROMPT: &str = "prompt.shared";

pub fn u_name(lang: &str) -> String {
    format!("prompt.lang.{lang}.u")
}

pub fn v_name(lang: &str) -> String {
    format!("prompt.lang.{lang}.v")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageVectors<T> {
    /// Length `l`.
    pub u: Tensor<T>,
    /// Length `d`.
    pub v: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank<T> {
    pub shared: Tensor<T>,
    pub languages: BTreeMap<String, LanguageVectors<T>>,
}

impl<T: Scalar> PromptBank<T> {
    pub fn new(shared: Tensor<T>) -> Result<Self> {
        if shared.shape().len() != 2 {
            return Err(Error::shape(
                "prompt bank",
                format!("shared prompt {:?}", shared.shape()),
            ));
        }
        Ok(Self {
            shared,
            languages: BTreeMap::new(),
        })
    }

    pub fn prompt_len(&self) -> usize {
        self.shared.rows()
    }

    pub fn dim(&self) -> usize {
        self.shared.cols()
    }

    pub fn insert(&mut self, lang: &str, u: Tensor<T>, v: Tensor<T>) -> Result<()> {
        if u.shape() != [self.prompt_len()] || v.shape() != [self.dim()] {
            return Err(Error::shape(
                "prompt bank",
                format!(
                    "u {:?} / v {:?} for shared {:?}",
                    u.shape(),
                    v.shape(),
                    self.shared.shape()
                ),
            ));
        }
        if self.languages.contains_key(lang) {
            return Err(Error::Conflict(format!("language `{lang}` already has prompt vectors")));
        }
        self.languages.insert(lang.to_string(), LanguageVectors { u, v });
        Ok(())
    }

    pub fn get(&self, lang: &str) -> Result<&LanguageVectors<T>> {
        self.languages
            .get(lang)
            .ok_or_else(|| Error::MissingLanguage(lang.to_string()))
    }

    /// Reads the bank out of a parameter store for the given languages.
    pub fn from_store(store: &ParamStore<T>, languages: &[String]) -> Result<Self> {
        let mut bank = Self::new(store.get(SHARED_PROMPT)?.clone())?;
        for lang in languages {
            let u = store.get(&u_name(lang))?.clone();
            let v = store.get(&v_name(lang))?.clone();
            bank.insert(lang, u, v)?;
        }
        Ok(bank)
    }

    /// Parameter count `l·d + Σ_k (l + d)`.
    pub fn parameter_count(&self) -> usize {
        self.shared.len() + self.languages.len() * (self.prompt_len() + self.dim())
    }
}

/// `P̂ = shared ⊙ (u vᵀ)`, i.e. `out[i][j] = shared[i][j] · (u[i] · v[j])`.
pub fn assemble_prompt<T: Scalar>(bank: &PromptBank<T>, lang: &str) -> Result<Tensor<T>> {
    let LanguageVectors { u, v } = bank.get(lang)?;
    let d = bank.dim();
    let data = bank
        .shared
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &p)| p * (u.data()[idx / d] * v.data()[idx % d]))
        .collect();
    Tensor::new(vec![bank.prompt_len(), d], data)
}

/// Records the prompt assembly for `lang` on a tape.
pub fn record_prompt<'a, T: Scalar>(tape: &mut Tape<'a, T>, store: &'a ParamStore<T>, lang: &str) -> Result<Var> {
    let (un, vn) = (u_name(lang), v_name(lang));
    if !store.contains(&un) || !store.contains(&vn) {
        return Err(Error::MissingLanguage(lang.to_string()));
    }
    let shared = tape.param(store, SHARED_PROMPT)?;
    let u = tape.param(store, &un)?;
    let v = tape.param(store, &vn)?;
    let mask = tape.outer(u, v)?;
    tape.hadamard(shared, mask)
}

/// Adds `new_lang` with `u`, `v` set to the elementwise means over every
/// trained language. Existing entries and the shared prompt are untouched.
pub fn synthesize_zero_shot_prompt<T: Scalar>(bank: &PromptBank<T>, new_lang: &str) -> Result<PromptBank<T>> {
    if bank.languages.contains_key(new_lang) {
        return Err(Error::Conflict(format!("language `{new_lang}` is already in the bank")));
    }
    if bank.languages.is_empty() {
        return Err(Error::Contract("cannot average an empty prompt bank".into()));
    }
    let k = T::from_usize(bank.languages.len()).expect("language count fits scalar");
    let mut u = vec![T::zero(); bank.prompt_len()];
    let mut v = vec![T::zero(); bank.dim()];
    for lv in bank.languages.values() {
        for (a, &b) in u.iter_mut().zip(lv.u.data()) {
            *a += b;
        }
        for (a, &b) in v.iter_mut().zip(lv.v.data()) {
            *a += b;
        }
    }
    u.iter_mut().for_each(|x| *x /= k);
    v.iter_mut().for_each(|x| *x /= k);
    let mut out = bank.clone();
    out.insert(new_lang, Tensor::vector(u)?, Tensor::vector(v)?)?;
    Ok(out)
}
