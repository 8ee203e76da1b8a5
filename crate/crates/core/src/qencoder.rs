//! Question embedding and decomposition into six role-specific summaries.

use alloc::format;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{linear, mean_pool_row, sinusoidal, Init};
use crate::numerics::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::transformer::{init_layer, layer};
use crate::vocab::PAD_ID;

/// The six question roles: node roles first, then their edge roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuestionRole {
    Object,
    ObjObj,
    ObjText,
    Text,
    TextText,
    TextObj,
}

impl QuestionRole {
    pub const ALL: [QuestionRole; 6] = [
        QuestionRole::Object,
        QuestionRole::ObjObj,
        QuestionRole::ObjText,
        QuestionRole::Text,
        QuestionRole::TextText,
        QuestionRole::TextObj,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QuestionRole::Object => "o",
            QuestionRole::ObjObj => "oo",
            QuestionRole::ObjText => "ot",
            QuestionRole::Text => "t",
            QuestionRole::TextText => "tt",
            QuestionRole::TextObj => "to",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Token ids padded to `T_max`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionTokens {
    ids: Vec<usize>,
    valid: Vec<bool>,
}

impl QuestionTokens {
    pub fn new(ids: &[usize], t_max: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        if ids.len() > t_max {
            return Err(Error::Invalid(format!("question has {} tokens, cap is {t_max}", ids.len())));
        }
        let mut padded = ids.to_vec();
        padded.resize(t_max, PAD_ID);
        let valid = (0..t_max).map(|t| t < ids.len()).collect();
        Ok(Self { ids: padded, valid })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles for a decomposed question, indexed by [`QuestionRole::index`].
#[derive(Clone, Debug)]
pub struct QuestionVars {
    /// `1 x T` token attention per role.
    pub attention: [Var; 6],
    /// `1 x d` guiding vector per role.
    pub guide: [Var; 6],
    /// Raw `1 x 3` logits behind the object and text triplets.
    pub obj_logits: Var,
    pub text_logits: Var,
    pub obj_triplet: Var,
    pub text_triplet: Var,
}

/// Plain values of a decomposed question.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedQuestion {
    pub guide: [Vec<f64>; 6],
    pub attention: [Vec<f64>; 6],
    pub obj_triplet: [f64; 3],
    pub text_triplet: [f64; 3],
}

impl QuestionVars {
    pub fn values(&self, tape: &Tape) -> DecomposedQuestion {
        let row = |v: Var| tape.value(v).data().to_vec();
        let tri = |v: Var| {
            let d = tape.value(v).data();
            [d[0], d[1], d[2]]
        };
        DecomposedQuestion {
            guide: self.guide.map(row),
            attention: self.attention.map(row),
            obj_triplet: tri(self.obj_triplet),
            text_triplet: tri(self.text_triplet),
        }
    }
}

pub fn init_params(init: &mut Init, ps: &mut ParamSet, cfg: &ModelConfig, vocab_size: usize) -> Result<()> {
    let d = cfg.d;
    ps.insert("qenc.embed", init.normal(vocab_size, d, 1.0))?;
    if cfg.question_encoder {
        init_layer(init, ps, "qenc.ctx", d, cfg.ffn_width)?;
    }
    for role in QuestionRole::ALL {
        init.linear(ps, &format!("qenc.role.{}.h", role.tag()), d, d, true)?;
        init.linear(ps, &format!("qenc.role.{}.out", role.tag()), d, 1, true)?;
    }
    init.linear(ps, "qenc.triplet.obj", d, 3, true)?;
    init.linear(ps, "qenc.triplet.text", d, 3, true)
}

/// `T_max x d` token embeddings; pad rows are zero.
pub fn embed_question(tape: &mut Tape, bp: &BoundParams<'_>, tokens: &QuestionTokens, cfg: &ModelConfig) -> Result<Var> {
    let table = bp.var("qenc.embed")?;
    let size = tape.value(table).rows();
    if let Some(&id) = tokens.ids().iter().find(|&&id| id >= size) {
        return Err(Error::TokenOutOfRange { id, size });
    }
    let index = tokens.ids().iter().zip(tokens.valid()).map(|(&id, &v)| v.then_some(id)).collect();
    let x = tape.gather_rows(table, index)?;
    if !cfg.question_encoder {
        return Ok(x);
    }
    let t = tokens.valid().len();
    let d = cfg.d;
    let mut pe = Tensor::zeros(t, d);
    for (pos, &v) in tokens.valid().iter().enumerate() {
        if v {
            pe.row_slice_mut(pos).copy_from_slice(&sinusoidal(pos, d));
        }
    }
    let pe = tape.constant(pe);
    let x = tape.add(x, pe)?;
    let mask: Vec<bool> = (0..t * t).map(|i| tokens.valid()[i % t]).collect();
    let h = layer(tape, bp, "qenc.ctx", x, x, &mask, cfg.heads, cfg.ln_eps)?;
    let keep = Tensor::from_vec(t, 1, tokens.valid().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect())?;
    let keep = tape.constant(keep);
    tape.mul_col(h, keep)
}

/// Per-role token attention `a = softmax_t(MLP(x_t))` over valid tokens,
/// `s = Σ_t a_t x_t`, and two 3-way triplets from the mean valid embedding.
pub fn decompose_question(tape: &mut Tape, bp: &BoundParams<'_>, x: Var, valid: &[bool]) -> Result<QuestionVars> {
    let t = tape.value(x).rows();
    if valid.len() != t {
        return Err(Error::Shape { op: "decompose_question", expected: (t, 1), found: (valid.len(), 1) });
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptyQuestion);
    }
    let mut attention = Vec::with_capacity(6);
    let mut guide = Vec::with_capacity(6);
    for role in QuestionRole::ALL {
        let h = linear(tape, bp, &format!("qenc.role.{}.h", role.tag()), x)?;
        let h = tape.relu(h);
        let logit = linear(tape, bp, &format!("qenc.role.{}.out", role.tag()), h)?;
        let logit = tape.transpose(logit);
        let a = tape.softmax_rows(logit, Some(valid.to_vec()))?;
        guide.push(tape.matmul(a, x)?);
        attention.push(a);
    }
    let pool = tape.constant(mean_pool_row(valid));
    let mean = tape.matmul(pool, x)?;
    let obj_logits = linear(tape, bp, "qenc.triplet.obj", mean)?;
    let text_logits = linear(tape, bp, "qenc.triplet.text", mean)?;
    let obj_triplet = tape.softmax_rows(obj_logits, None)?;
    let text_triplet = tape.softmax_rows(text_logits, None)?;
    Ok(QuestionVars {
        attention: attention.try_into().expect("six roles"),
        guide: guide.try_into().expect("six roles"),
        obj_logits,
        text_logits,
        obj_triplet,
        text_triplet,
    })
}
