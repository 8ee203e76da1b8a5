//! Node embeddings and question-guided attention over the scene graph.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::{APPEARANCE_DIM, BOX_DIM, PHOC_DIM, RECOG_DIM, WORD_VEC_DIM};
use crate::graph::{EdgeRole, EdgeSet};
use crate::nn::{add_layer_norm, layer_norm, linear, Init};
use crate::numerics::{BoundParams, ParamSet, Tape, Tensor, Var};

pub const EDGE_FEATURE_DIM: usize = 5;

pub fn init_params(init: &mut Init, ps: &mut ParamSet, d: usize) -> Result<()> {
    init.linear(ps, "node.obj.fr", APPEARANCE_DIM, d, false)?;
    init.linear(ps, "node.obj.box", BOX_DIM, d, false)?;
    add_layer_norm(ps, "node.obj.ln_fr", d)?;
    add_layer_norm(ps, "node.obj.ln_box", d)?;
    for (name, width) in [("ft", WORD_VEC_DIM), ("fr", APPEARANCE_DIM), ("p", PHOC_DIM), ("rec", RECOG_DIM), ("box", BOX_DIM)] {
        init.linear(ps, &format!("node.text.{name}"), width, d, false)?;
    }
    add_layer_norm(ps, "node.text.ln_feat", d)?;
    add_layer_norm(ps, "node.text.ln_box", d)?;
    for role in ["o", "t"] {
        init_guided(init, ps, &format!("attn.{role}"), d)?;
    }
    for role in EdgeRole::ALL {
        let p = format!("attn.{}", role.tag());
        init.linear(ps, &format!("{p}.mlp1"), EDGE_FEATURE_DIM + d, d, true)?;
        init.linear(ps, &format!("{p}.mlp2"), d, d, true)?;
        init_guided(init, ps, &format!("{p}.edge"), d)?;
        init_guided(init, ps, &format!("{p}.node"), d)?;
    }
    Ok(())
}

fn init_guided(init: &mut Init, ps: &mut ParamSet, prefix: &str, d: usize) -> Result<()> {
    init.linear(ps, &format!("{prefix}.ws"), d, d, false)?;
    init.linear(ps, &format!("{prefix}.wx"), d, d, false)?;
    init.linear(ps, &format!("{prefix}.w"), d, 1, false)
}

/// `n x 1` logits `wᵀ[ReLU(W_s s) ∘ ReLU(W_x x_i)]` for every row of `x`.
pub fn guided_logits(tape: &mut Tape, bp: &BoundParams<'_>, prefix: &str, x: Var, s: Var) -> Result<Var> {
    let hs = linear(tape, bp, &format!("{prefix}.ws"), s)?;
    let hs = tape.relu(hs);
    let hx = linear(tape, bp, &format!("{prefix}.wx"), x)?;
    let hx = tape.relu(hx);
    let z = tape.mul_row(hx, hs)?;
    linear(tape, bp, &format!("{prefix}.w"), z)
}

/// `LN(W_fr x_fr) + LN(W_b x_box)` per object.
pub fn embed_object_nodes(tape: &mut Tape, bp: &BoundParams<'_>, appearance: Var, boxes: Var, eps: f64) -> Result<Var> {
    let a = linear(tape, bp, "node.obj.fr", appearance)?;
    let a = layer_norm(tape, bp, "node.obj.ln_fr", a, eps)?;
    let b = linear(tape, bp, "node.obj.box", boxes)?;
    let b = layer_norm(tape, bp, "node.obj.ln_box", b, eps)?;
    tape.add(a, b)
}

/// Text node features, one row per OCR token.
#[derive(Clone, Copy, Debug)]
pub struct TextInputs {
    pub word_vec: Var,
    pub appearance: Var,
    pub phoc: Var,
    pub recog: Var,
    pub boxes: Var,
}

/// `LN(W_ft x_ft + W_fr x_fr + W_p x_p + W_rec x_rec) + LN(W_b x_box)` per token.
pub fn embed_text_nodes(tape: &mut Tape, bp: &BoundParams<'_>, inputs: TextInputs, eps: f64) -> Result<Var> {
    let mut x = linear(tape, bp, "node.text.ft", inputs.word_vec)?;
    for (name, v) in [("fr", inputs.appearance), ("p", inputs.phoc), ("rec", inputs.recog)] {
        let y = linear(tape, bp, &format!("node.text.{name}"), v)?;
        x = tape.add(x, y)?;
    }
    let x = layer_norm(tape, bp, "node.text.ln_feat", x, eps)?;
    let b = linear(tape, bp, "node.text.box", inputs.boxes)?;
    let b = layer_norm(tape, bp, "node.text.ln_box", b, eps)?;
    tape.add(x, b)
}

/// `1 x n` attention of guiding vector `s` over node rows; `role` is `o` or `t`.
pub fn node_attention(tape: &mut Tape, bp: &BoundParams<'_>, role: &str, x: Var, s: Var) -> Result<Var> {
    if tape.value(x).rows() == 0 {
        return Err(Error::EmptySupport);
    }
    let logits = guided_logits(tape, bp, &format!("attn.{role}"), x, s)?;
    let logits = tape.transpose(logits);
    tape.softmax_rows(logits, None)
}

/// Tape handles for one edge role.
#[derive(Clone, Debug)]
pub struct EdgeAttentionVars {
    /// `n_src x kmax` neighborhood attention; slot `(i, j)` holds edge `slots[i * kmax + j]`.
    pub q: Var,
    pub slots: Vec<Option<usize>>,
    pub kmax: usize,
    /// `E x d` edge representations.
    pub edge_repr: Var,
    /// `n_src x d` attended edge features; zero rows for empty neighborhoods.
    pub x_tilde: Var,
    /// `1 x n_src` node weights over nodes with a nonempty neighborhood.
    pub p: Var,
    pub support: Vec<bool>,
}

impl EdgeAttentionVars {
    /// Neighborhood attention indexed by edge.
    pub fn edge_weights(&self, tape: &Tape) -> Vec<f64> {
        let q = tape.value(self.q).data();
        let n_edges = self.slots.iter().flatten().count();
        let mut out = vec![0.0; n_edges];
        for (slot, e) in self.slots.iter().enumerate() {
            if let Some(e) = e {
                out[*e] = q[slot];
            }
        }
        out
    }
}

/// Two-step attention for `role`: each edge gets `x̂_ij = MLP([e_ij; x̂_i])`,
/// each source node softmaxes its neighborhood into `x̃_i = Σ_j q_ij x̂_ij`,
/// then a second guided softmax runs over nodes with nonempty neighborhoods.
pub fn edge_attention(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    role: EdgeRole,
    edges: &EdgeSet,
    x_src: Var,
    s: Var,
) -> Result<EdgeAttentionVars> {
    if edges.is_empty() {
        return Err(Error::EmptySupport);
    }
    let n_src = tape.value(x_src).rows();
    if let Some(e) = edges.edges.iter().find(|e| e.source >= n_src) {
        return Err(Error::Invalid(format!("edge source {} out of range for {n_src} nodes", e.source)));
    }
    let prefix = format!("attn.{}", role.tag());
    let n_edges = edges.len();
    let src = tape.gather_rows(x_src, edges.edges.iter().map(|e| Some(e.source)).collect())?;
    let feats = Tensor::from_vec(n_edges, EDGE_FEATURE_DIM, edges.edges.iter().flat_map(|e| e.feature.0).collect())?;
    let feats = tape.constant(feats);
    let input = tape.concat_cols(&[feats, src])?;
    let h = linear(tape, bp, &format!("{prefix}.mlp1"), input)?;
    let h = tape.relu(h);
    let edge_repr = linear(tape, bp, &format!("{prefix}.mlp2"), h)?;

    let hoods = edges.neighborhoods(n_src);
    let kmax = hoods.iter().map(Vec::len).max().unwrap_or(0);
    let mut slots = vec![None; n_src * kmax];
    for (i, hood) in hoods.iter().enumerate() {
        for (j, &e) in hood.iter().enumerate() {
            slots[i * kmax + j] = Some(e);
        }
    }
    let slot_mask: Vec<bool> = slots.iter().map(Option::is_some).collect();

    let logits = guided_logits(tape, bp, &format!("{prefix}.edge"), edge_repr, s)?;
    let dense = tape.gather_rows(logits, slots.clone())?;
    let dense = tape.reshape(dense, n_src, kmax)?;
    let q = tape.softmax_rows(dense, Some(slot_mask))?;

    let qcol = tape.reshape(q, n_src * kmax, 1)?;
    let spread = tape.gather_rows(edge_repr, slots.clone())?;
    let weighted = tape.mul_col(spread, qcol)?;
    let mut seg = Tensor::zeros(n_src, n_src * kmax);
    for i in 0..n_src {
        for j in 0..kmax {
            seg.set(i, i * kmax + j, 1.0);
        }
    }
    let seg = tape.constant(seg);
    let x_tilde = tape.matmul(seg, weighted)?;

    let support: Vec<bool> = hoods.iter().map(|h| !h.is_empty()).collect();
    let node_logits = guided_logits(tape, bp, &format!("{prefix}.node"), x_tilde, s)?;
    let node_logits = tape.transpose(node_logits);
    let p = tape.softmax_rows(node_logits, Some(support.clone()))?;
    Ok(EdgeAttentionVars { q, slots, kmax, edge_repr, x_tilde, p, support })
}

/// Triplet `softmax(logits)` restricted to the enabled roles, i.e. the full
/// triplet with disabled entries zeroed and the rest renormalized.
pub fn renormalize_triplet(tape: &mut Tape, logits: Var, enabled: [bool; 3]) -> Result<Var> {
    if !enabled[0] {
        return Err(Error::Invalid("the node role of a triplet cannot be disabled".into()));
    }
    tape.softmax_rows(logits, Some(enabled.to_vec()))
}

/// `α = w_node p_node + w_e1 p_e1 + w_e2 p_e2`, with absent roles contributing zero.
pub fn combine_weights(tape: &mut Tape, p: [Option<Var>; 3], triplet: Var) -> Result<Var> {
    let base = p[0].ok_or(Error::EmptySupport)?;
    let n = tape.value(base).cols();
    if tape.value(triplet).shape() != [1, 3] {
        let t = tape.value(triplet);
        return Err(Error::Shape { op: "combine_weights", expected: (1, 3), found: (t.rows(), t.cols()) });
    }
    let mut rows = Vec::with_capacity(3);
    for v in p {
        let v = match v {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(1, n)),
        };
        let shape = tape.value(v).shape();
        if shape != [1, n] {
            return Err(Error::Shape { op: "combine_weights", expected: (1, n), found: (shape[0], shape[1]) });
        }
        rows.push(v);
    }
    let stacked = tape.concat_rows(&rows)?;
    tape.matmul(triplet, stacked)
}

/// `g = Σ_i α_i x̂_i`.
pub fn fuse_features(tape: &mut Tape, alpha: Var, x: Var) -> Result<Var> {
    tape.matmul(alpha, x)
}
