use alloc::format;

use crate::error::{Error, Result};
use crate::features::{MAX_OBJECTS, MAX_QUESTION_LEN, MAX_TEXTS};
use crate::graph::EdgeRole;

/// Which edge roles take part in the weighting step. Disabling a role pins
/// its weight to zero and renormalizes the remaining two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelationSet {
    pub oo: bool,
    pub ot: bool,
    pub tt: bool,
    pub to: bool,
}

impl RelationSet {
    pub const ALL: RelationSet = RelationSet { oo: true, ot: true, tt: true, to: true };
    pub const NONE: RelationSet = RelationSet { oo: false, ot: false, tt: false, to: false };

    pub fn enabled(&self, role: EdgeRole) -> bool {
        match role {
            EdgeRole::ObjObj => self.oo,
            EdgeRole::ObjText => self.ot,
            EdgeRole::TextText => self.tt,
            EdgeRole::TextObj => self.to,
        }
    }
}

impl Default for RelationSet {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    /// Common hidden width of every projection.
    pub d: usize,
    /// Neighbors per node and target role.
    pub k: usize,
    pub max_objects: usize,
    pub max_texts: usize,
    pub max_question_len: usize,
    /// Maximum decoding steps, including the end token.
    pub max_decode_steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// Contextual self-attention layer over question tokens.
    pub question_encoder: bool,
    pub relations: RelationSet,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small preset for single-core runs.
    pub fn desk() -> Self {
        Self {
            d: 64,
            k: 5,
            max_objects: MAX_OBJECTS,
            max_texts: MAX_TEXTS,
            max_question_len: MAX_QUESTION_LEN,
            max_decode_steps: 12,
            layers: 4,
            heads: 4,
            ffn_width: 128,
            question_encoder: true,
            relations: RelationSet::ALL,
            ln_eps: 1e-5,
        }
    }

    /// Full-size preset (BERT-base widths). Not practical on one core.
    pub fn full() -> Self {
        Self { d: 768, heads: 12, ffn_width: 3072, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_decode_steps == 0 {
            return bad("max_decode_steps must be at least 1".into());
        }
        if self.max_objects > MAX_OBJECTS || self.max_texts > MAX_TEXTS || self.max_question_len > MAX_QUESTION_LEN {
            return bad(format!(
                "caps exceed supported maxima ({MAX_OBJECTS} objects, {MAX_TEXTS} texts, {MAX_QUESTION_LEN} question tokens)"
            ));
        }
        if self.max_question_len == 0 || self.ffn_width == 0 {
            return bad("max_question_len and ffn_width must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        Ok(())
    }
}
