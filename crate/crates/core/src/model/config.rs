use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{FIRST_WORD_ID, LANG_TOKEN_BASE, MAX_LANGUAGES};
use crate::error::{Error, Result};

/// Which document encoder the model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Prompt-conditioned decoder with `decoder_layers` distinct layers.
    Spd,
    /// One shared decoder block applied `decoder_layers` times, with a
    /// learned temporal embedding added after each step.
    Utspd,
    /// Mean pool over encoder outputs; no prompts, no decoder.
    EncoderOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Prompt length `l`.
    pub prompt_len: usize,
    /// Decoder depth `N` (recurrence steps for UTSPD).
    pub decoder_layers: usize,
    /// Attention heads `M`.
    pub heads: usize,
    pub ffn_dim: usize,
    /// Size of the token-embedding table, reserved ids included.
    pub vocab_size: usize,
    /// Tokens per input, language token included.
    pub max_seq_len: usize,
    pub encoder_layers: usize,
    pub variant: Variant,
    pub languages: Vec<String>,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl SpdConfig {
    /// Desk-scale defaults: d=32, l=8, N=2, M=4, d_ffn=64.
    pub fn desk(vocab_size: usize, languages: Vec<String>) -> Self {
        Self {
            dim: 32,
            prompt_len: 8,
            decoder_layers: 2,
            heads: 4,
            ffn_dim: 64,
            vocab_size,
            max_seq_len: 32,
            encoder_layers: 2,
            variant: Variant::Spd,
            languages,
            ln_eps: default_ln_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.prompt_len == 0 || self.decoder_layers == 0 || self.ffn_dim == 0 {
            return bad("prompt_len, decoder_layers and ffn_dim must be at least 1".into());
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must leave room for content and the language token".into());
        }
        if self.vocab_size <= FIRST_WORD_ID {
            return bad(format!("vocab_size must exceed the {FIRST_WORD_ID} reserved ids"));
        }
        if self.languages.is_empty() || self.languages.len() > MAX_LANGUAGES {
            return bad(format!("between 1 and {MAX_LANGUAGES} languages are supported"));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.languages {
            if l.is_empty() || !seen.insert(l) {
                return bad(format!("language code `{l}` is empty or repeated"));
            }
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        Ok(())
    }

    pub fn language_index(&self, lang: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| Error::MissingLanguage(lang.to_string()))
    }

    /// Reserved token id appended to inputs in `lang`.
    pub fn language_token(&self, lang: &str) -> Result<usize> {
        Ok(LANG_TOKEN_BASE + self.language_index(lang)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        SpdConfig::desk(100, vec!["en".into(), "xa".into()]).validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let base = SpdConfig::desk(100, vec!["en".into()]);
        let mut c = base.clone();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.languages = vec!["en".into(), "en".into()];
        assert!(c.validate().is_err());
        let mut c = base;
        c.prompt_len = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn language_tokens_are_reserved() {
        let c = SpdConfig::desk(100, vec!["en".into(), "xa".into()]);
        assert_eq!(c.language_token("xa").unwrap(), LANG_TOKEN_BASE + 1);
        assert!(c.language_token("xa").unwrap() < FIRST_WORD_ID);
        assert!(matches!(c.language_token("zz"), Err(Error::MissingLanguage(_))));
    }
}
