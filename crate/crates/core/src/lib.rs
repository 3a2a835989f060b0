//! Knowledge-distilled soft prompt decoding for multilingual dense retrieval.
//!
//! A frozen English teacher embeds documents; a multilingual student (token
//! encoder, language-conditioned soft prompts, cross-attention decoder) is
//! trained on bitext to reproduce those embeddings, so English query vectors
//! from the teacher can search a mixed-language collection directly.
//!
//! The numeric core is generic over [`Scalar`]; training uses `f32` and
//! gradient verification uses `f64`. The aliases below name both.

pub mod autodiff;
mod binio;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
mod kernels;
pub mod model;
pub mod parallelism;
pub mod retrieval;
pub mod scalar;
pub mod teacher;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{InitScheme, ParamStore, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type SpdModel32 = model::SpdModel<f32>;
pub type SpdModel64 = model::SpdModel<f64>;
pub type PromptBank32 = model::PromptBank<f32>;
pub type PromptBank64 = model::PromptBank<f64>;
