//! The attention block shared by the token encoder (self-attention) and the
//! prompt decoder (cross-attention).
//!
//! Each block is two sub-layers with residual connections and layer norm:
//!
//! ```text
//! h   = LN1(Q + Wᵒ [Attn_1, …, Attn_M])
//! out = LN2(h + W2 · relu(W1 · h + b1) + b2)
//! Attn_m = softmax((Q Wᵠ_mᵀ)(K Wᵏ_mᵀ)ᵀ / sqrt(d/M)) (K Wᵛ_mᵀ)
//! ```
//!
//! With `K = Q` this is an encoder layer.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{InitScheme, ParamStore};

use super::config::SpdConfig;

/// Parameter names of one block under a prefix.
#[derive(Debug, Clone)]
pub struct BlockNames {
    pub query: Vec<String>,
    pub key: Vec<String>,
    pub value: Vec<String>,
    pub output: String,
    pub ffn_w1: String,
    pub ffn_b1: String,
    pub ffn_w2: String,
    pub ffn_b2: String,
    pub ln1_gain: String,
    pub ln1_bias: String,
    pub ln2_gain: String,
    pub ln2_bias: String,
}

impl BlockNames {
    pub fn new(prefix: &str, heads: usize) -> Self {
        let per_head = |kind: &str| (0..heads).map(|m| format!("{prefix}.attn.{kind}.head{m:02}")).collect();
        Self {
            query: per_head("query"),
            key: per_head("key"),
            value: per_head("value"),
            output: format!("{prefix}.attn.output"),
            ffn_w1: format!("{prefix}.ffn.w1"),
            ffn_b1: format!("{prefix}.ffn.b1"),
            ffn_w2: format!("{prefix}.ffn.w2"),
            ffn_b2: format!("{prefix}.ffn.b2"),
            ln1_gain: format!("{prefix}.ln1.gain"),
            ln1_bias: format!("{prefix}.ln1.bias"),
            ln2_gain: format!("{prefix}.ln2.gain"),
            ln2_bias: format!("{prefix}.ln2.bias"),
        }
    }
}

/// Parameter count of one block:
/// `M·3·(d/M)·d + d·d + 2·d·d_ffn + d_ffn + d + 4·d`.
pub fn block_parameter_count(config: &SpdConfig) -> usize {
    let (d, m, f) = (config.dim, config.heads, config.ffn_dim);
    m * 3 * (d / m) * d + d * d + 2 * d * f + f + d + 4 * d
}

pub fn init_block<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, config: &SpdConfig) -> Result<()> {
    let names = BlockNames::new(prefix, config.heads);
    let (d, dh, f) = (config.dim, config.head_dim(), config.ffn_dim);
    for n in names.query.iter().chain(&names.key).chain(&names.value) {
        store.init(n, vec![dh, d], InitScheme::XavierUniform)?;
    }
    store.init(&names.output, vec![d, d], InitScheme::XavierUniform)?;
    store.init(&names.ffn_w1, vec![f, d], InitScheme::XavierUniform)?;
    store.init(&names.ffn_b1, vec![f], InitScheme::Constant(0.0))?;
    store.init(&names.ffn_w2, vec![d, f], InitScheme::XavierUniform)?;
    store.init(&names.ffn_b2, vec![d], InitScheme::Constant(0.0))?;
    store.init(&names.ln1_gain, vec![d], InitScheme::Constant(1.0))?;
    store.init(&names.ln1_bias, vec![d], InitScheme::Constant(0.0))?;
    store.init(&names.ln2_gain, vec![d], InitScheme::Constant(1.0))?;
    store.init(&names.ln2_bias, vec![d], InitScheme::Constant(0.0))?;
    Ok(())
}

/// One block: `queries` (l×d) attend over `keys` (n×d); returns l×d.
pub fn attention_block<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    store: &'a ParamStore<T>,
    names: &BlockNames,
    queries: Var,
    keys: Var,
    ln_eps: T,
) -> Result<Var> {
    let heads = names.query.len();
    let dh = tape.value(queries).cols() / heads;
    let scale = T::one() / T::from_usize(dh).expect("head dim fits scalar").sqrt();

    let mut outs = Vec::with_capacity(heads);
    for m in 0..heads {
        let wq = tape.param(store, &names.query[m])?;
        let wk = tape.param(store, &names.key[m])?;
        let wv = tape.param(store, &names.value[m])?;
        let q = tape.matmul_bt(queries, wq)?;
        let k = tape.matmul_bt(keys, wk)?;
        let v = tape.matmul_bt(keys, wv)?;
        let scores = tape.matmul_bt(q, k)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        outs.push(tape.matmul(weights, v)?);
    }
    let concat = tape.concat_cols(&outs)?;
    let wo = tape.param(store, &names.output)?;
    let attended = tape.matmul_bt(concat, wo)?;
    let residual = tape.add(queries, attended)?;
    let g1 = tape.param(store, &names.ln1_gain)?;
    let b1 = tape.param(store, &names.ln1_bias)?;
    let h = tape.layer_norm(residual, g1, b1, ln_eps)?;

    let w1 = tape.param(store, &names.ffn_w1)?;
    let bias1 = tape.param(store, &names.ffn_b1)?;
    let w2 = tape.param(store, &names.ffn_w2)?;
    let bias2 = tape.param(store, &names.ffn_b2)?;
    let hidden = tape.matmul_bt(h, w1)?;
    let hidden = tape.add_row(hidden, bias1)?;
    let hidden = tape.relu(hidden);
    let ffn = tape.matmul_bt(hidden, w2)?;
    let ffn = tape.add_row(ffn, bias2)?;
    let residual = tape.add(h, ffn)?;
    let g2 = tape.param(store, &names.ln2_gain)?;
    let b2 = tape.param(store, &names.ln2_bias)?;
    tape.layer_norm(residual, g2, b2, ln_eps)
}
