//! Post-norm multi-head transformer layers.
//!
//! The answer decoder's sequence is `[context rows | decoder rows]`. Context
//! rows attend among themselves only, decoder rows see every context row and
//! the decoder rows up to their own step. Because context rows never look at
//! decoder rows, the stack can be run in two passes: [`encode_context`] once,
//! then [`decode_rows`] against the stored per-layer context states. Both
//! passes together equal [`transformer_forward`] over the full sequence.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::nn::{add_layer_norm, layer_norm, linear, Init};
use crate::numerics::{BoundParams, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackSpec<'a> {
    pub prefix: &'a str,
    pub layers: usize,
    pub heads: usize,
    pub ln_eps: f64,
}

pub fn init_layer(init: &mut Init, ps: &mut ParamSet, prefix: &str, d: usize, ffn: usize) -> Result<()> {
    for p in ["q", "k", "v", "o"] {
        init.linear(ps, &format!("{prefix}.{p}"), d, d, true)?;
    }
    add_layer_norm(ps, &format!("{prefix}.ln1"), d)?;
    init.linear(ps, &format!("{prefix}.ff1"), d, ffn, true)?;
    init.linear(ps, &format!("{prefix}.ff2"), ffn, d, true)?;
    add_layer_norm(ps, &format!("{prefix}.ln2"), d)
}

pub fn init_stack(init: &mut Init, ps: &mut ParamSet, prefix: &str, layers: usize, d: usize, ffn: usize) -> Result<()> {
    (0..layers).try_for_each(|l| init_layer(init, ps, &format!("{prefix}.{l}"), d, ffn))
}

/// Scaled dot-product attention of `query` rows over `kv` rows. `mask` is
/// row-major `query.rows x kv.rows`.
pub fn multi_head_attention(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    prefix: &str,
    query: Var,
    kv: Var,
    mask: &[bool],
    heads: usize,
) -> Result<Var> {
    let q = linear(tape, bp, &format!("{prefix}.q"), query)?;
    let k = linear(tape, bp, &format!("{prefix}.k"), kv)?;
    let v = linear(tape, bp, &format!("{prefix}.v"), kv)?;
    let d = tape.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, h * dh, dh)?, tape.slice_cols(k, h * dh, dh)?, tape.slice_cols(v, h * dh, dh)?)
        };
        let s = tape.matmul_bt(qh, kh)?;
        let s = tape.scale(s, scale);
        let a = tape.softmax_rows(s, Some(mask.to_vec()))?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    linear(tape, bp, &format!("{prefix}.o"), cat)
}

/// One post-norm layer: `LN(x + MHA(x, kv))`, then `LN(y + FFN(y))`.
pub fn layer(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    prefix: &str,
    query: Var,
    kv: Var,
    mask: &[bool],
    heads: usize,
    eps: f64,
) -> Result<Var> {
    let a = multi_head_attention(tape, bp, prefix, query, kv, mask, heads)?;
    let x = tape.add(query, a)?;
    let x = layer_norm(tape, bp, &format!("{prefix}.ln1"), x, eps)?;
    let f = linear(tape, bp, &format!("{prefix}.ff1"), x)?;
    let f = tape.relu(f);
    let f = linear(tape, bp, &format!("{prefix}.ff2"), f)?;
    let y = tape.add(x, f)?;
    layer_norm(tape, bp, &format!("{prefix}.ln2"), y, eps)
}

/// Mask for the `[context | decoder]` layout: full attention inside the
/// context block, causal inside the decoder block, no context→decoder links.
pub fn sequence_mask(n_ctx: usize, n_dec: usize) -> Vec<bool> {
    let n = n_ctx + n_dec;
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if i < n_ctx { j < n_ctx } else { j <= i };
        }
    }
    m
}

/// Runs the stack over the whole sequence with [`sequence_mask`].
pub fn transformer_forward(tape: &mut Tape, bp: &BoundParams<'_>, spec: StackSpec<'_>, seq: Var, n_ctx: usize) -> Result<Var> {
    let n = tape.value(seq).rows();
    let mask = sequence_mask(n_ctx, n - n_ctx);
    let mut x = seq;
    for l in 0..spec.layers {
        x = layer(tape, bp, &format!("{}.{l}", spec.prefix), x, x, &mask, spec.heads, spec.ln_eps)?;
    }
    Ok(x)
}

/// Per-layer inputs of the context rows plus the final output.
#[derive(Clone, Debug)]
pub struct ContextStates {
    pub layer_inputs: Vec<Var>,
    pub output: Var,
    pub rows: usize,
}

pub fn encode_context(tape: &mut Tape, bp: &BoundParams<'_>, spec: StackSpec<'_>, ctx: Var) -> Result<ContextStates> {
    let n = tape.value(ctx).rows();
    let mask = vec![true; n * n];
    let mut x = ctx;
    let mut layer_inputs = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        layer_inputs.push(x);
        x = layer(tape, bp, &format!("{}.{l}", spec.prefix), x, x, &mask, spec.heads, spec.ln_eps)?;
    }
    Ok(ContextStates { layer_inputs, output: x, rows: n })
}

/// Decoder rows through the stack, attending to the stored context states
/// and causally to each other.
pub fn decode_rows(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    spec: StackSpec<'_>,
    ctx: &ContextStates,
    dec: Var,
) -> Result<Var> {
    let n_dec = tape.value(dec).rows();
    let n_ctx = ctx.rows;
    let width = n_ctx + n_dec;
    let mut mask = vec![false; n_dec * width];
    for i in 0..n_dec {
        for j in 0..width {
            mask[i * width + j] = j < n_ctx || j - n_ctx <= i;
        }
    }
    let mut y = dec;
    for l in 0..spec.layers {
        let kv = tape.concat_rows(&[ctx.layer_inputs[l], y])?;
        y = layer(tape, bp, &format!("{}.{l}", spec.prefix), y, kv, &mask, spec.heads, spec.ln_eps)?;
    }
    Ok(y)
}
