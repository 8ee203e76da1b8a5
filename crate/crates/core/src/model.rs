//! The full model: parameters, per-instance preprocessing, the forward pass,
//! teacher-forced loss, greedy decoding and the attention dump.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{
    self, combine_weights, edge_attention, embed_object_nodes, embed_text_nodes, fuse_features, node_attention,
    renormalize_triplet, EdgeAttentionVars, TextInputs,
};
use crate::config::ModelConfig;
use crate::decoder::{
    self, bce_loss, build_global_inputs, build_targets, encode_inputs, greedy_decode, teacher_forced_scores,
    weighted_ocr, ContextOutputs, DecodedAnswer, TargetMatrix,
};
use crate::error::{Error, Result};
use crate::features::{featurize, Instance, NodeFeatures};
use crate::graph::{build_graph, EdgeRole, SceneGraph};
use crate::metrics::normalize_answer;
use crate::nn::Init;
use crate::numerics::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::qencoder::{self, decompose_question, embed_question, QuestionRole, QuestionTokens, QuestionVars};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub question_vocab: Vocabulary,
    pub answer_vocab: Vocabulary,
    pub params: ParamSet,
}

/// Parameter-independent inputs for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInstance {
    pub id: String,
    pub tokens: QuestionTokens,
    pub features: NodeFeatures,
    pub graph: SceneGraph,
    pub ocr_tokens: Vec<String>,
    pub answers: Vec<String>,
    /// Targets for the training answer; `None` when the instance has no answers.
    pub targets: Option<TargetMatrix>,
}

/// The most frequent normalized answer, earliest first on ties.
pub fn training_answer(answers: &[String]) -> Option<String> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, a) in answers.iter().enumerate() {
        let n = normalize_answer(a);
        if n.is_empty() {
            continue;
        }
        counts.entry(n).or_insert((0, i)).0 += 1;
    }
    counts.into_iter().max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1))).map(|(a, _)| a)
}

impl Model {
    pub fn new(config: ModelConfig, question_vocab: Vocabulary, answer_vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Self::init_params(&config, question_vocab.len(), answer_vocab.len(), seed)?;
        Ok(Self { config, question_vocab, answer_vocab, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, question_vocab: Vocabulary, answer_vocab: Vocabulary, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let fresh = Self::init_params(&config, question_vocab.len(), answer_vocab.len(), 0)?;
        if fresh.len() != params.len() {
            return Err(Error::Config(format!("expected {} parameter blocks, found {}", fresh.len(), params.len())));
        }
        for (name, t) in fresh.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Config(format!("parameter `{name}` has shape {:?}, expected {:?}", got.shape(), t.shape())));
            }
        }
        Ok(Self { config, question_vocab, answer_vocab, params })
    }

    fn init_params(cfg: &ModelConfig, q_vocab: usize, a_vocab: usize, seed: u64) -> Result<ParamSet> {
        let mut init = Init::new(seed);
        let mut ps = ParamSet::new();
        qencoder::init_params(&mut init, &mut ps, cfg, q_vocab)?;
        attention::init_params(&mut init, &mut ps, cfg.d)?;
        decoder::init_params(&mut init, &mut ps, cfg, a_vocab)?;
        Ok(ps)
    }

    /// Validates `inst` against the configured caps and precomputes its
    /// features, graph and targets.
    pub fn encode_instance(&self, inst: &Instance) -> Result<EncodedInstance> {
        let cfg = &self.config;
        inst.validate()?;
        let bad = |m: String| Err(Error::Instance(format!("{}: {m}", inst.id)));
        if inst.objects.len() > cfg.max_objects {
            return bad(format!("{} objects exceed the cap of {}", inst.objects.len(), cfg.max_objects));
        }
        if inst.texts.len() > cfg.max_texts {
            return bad(format!("{} OCR tokens exceed the cap of {}", inst.texts.len(), cfg.max_texts));
        }
        if inst.question.len() > cfg.max_question_len {
            return bad(format!("question has {} tokens, cap is {}", inst.question.len(), cfg.max_question_len));
        }
        if inst.objects.is_empty() && inst.texts.is_empty() {
            return bad("scene has no objects and no OCR tokens".into());
        }
        let tokens = QuestionTokens::new(&self.question_vocab.encode(&inst.question), cfg.max_question_len)?;
        let ocr_tokens = inst.tokens();
        let graph = build_graph(&inst.object_boxes(), &inst.text_boxes(), &ocr_tokens, cfg.k, inst.width, inst.height)?;
        let targets = match training_answer(&inst.answers) {
            Some(a) => Some(build_targets(&a, &self.answer_vocab, &ocr_tokens, cfg.max_decode_steps, cfg.max_texts)?),
            None => None,
        };
        Ok(EncodedInstance {
            id: inst.id.clone(),
            tokens,
            features: featurize(inst),
            graph,
            ocr_tokens,
            answers: inst.answers.clone(),
            targets,
        })
    }

    pub fn encode_all(&self, data: &[Instance]) -> Result<Vec<EncodedInstance>> {
        data.iter().map(|i| self.encode_instance(i)).collect()
    }

    /// Question decomposition, graph attention and the context pass of the decoder.
    pub fn forward_scene(&self, tape: &mut Tape, bp: &BoundParams<'_>, enc: &EncodedInstance) -> Result<SceneVars> {
        let cfg = &self.config;
        let x_q = embed_question(tape, bp, &enc.tokens, cfg)?;
        let q = decompose_question(tape, bp, x_q, enc.tokens.valid())?;
        let f = &enc.features;
        let x_obj = if enc.graph.objects.is_empty() {
            None
        } else {
            let a = tape.shared_leaf(f.obj_appearance.clone(), false);
            let b = tape.shared_leaf(f.obj_box.clone(), false);
            Some(embed_object_nodes(tape, bp, a, b, cfg.ln_eps)?)
        };
        let x_text = if enc.graph.texts.is_empty() {
            None
        } else {
            let inputs = TextInputs {
                word_vec: tape.shared_leaf(f.text_word_vec.clone(), false),
                appearance: tape.shared_leaf(f.text_appearance.clone(), false),
                phoc: tape.shared_leaf(f.text_phoc.clone(), false),
                recog: tape.shared_leaf(f.text_recog.clone(), false),
                boxes: tape.shared_leaf(f.text_box.clone(), false),
            };
            Some(embed_text_nodes(tape, bp, inputs, cfg.ln_eps)?)
        };

        let guide = |r: QuestionRole| q.guide[r.index()];
        let mut edges: [Option<EdgeAttentionVars>; 4] = Default::default();
        for role in EdgeRole::ALL {
            let src = match role {
                EdgeRole::ObjObj | EdgeRole::ObjText => x_obj,
                EdgeRole::TextText | EdgeRole::TextObj => x_text,
            };
            let set = enc.graph.edge_set(role);
            if let (Some(x), true) = (src, cfg.relations.enabled(role) && !set.is_empty()) {
                let s = guide(edge_question_role(role));
                edges[role.index()] = Some(edge_attention(tape, bp, role, set, x, s)?);
            }
        }

        let d = cfg.d;
        let branch = |tape: &mut Tape, x: Option<Var>, node: QuestionRole, roles: [EdgeRole; 2], logits: Var| -> Result<Branch> {
            let Some(x) = x else {
                return Ok(Branch { p_node: None, triplet: None, alpha: None, g: tape.constant(Tensor::zeros(1, d)) });
            };
            let tag = if node == QuestionRole::Object { "o" } else { "t" };
            let p_node = node_attention(tape, bp, tag, x, guide(node))?;
            let e1 = edges[roles[0].index()].as_ref().map(|e| e.p);
            let e2 = edges[roles[1].index()].as_ref().map(|e| e.p);
            let triplet = renormalize_triplet(tape, logits, [true, e1.is_some(), e2.is_some()])?;
            let alpha = combine_weights(tape, [Some(p_node), e1, e2], triplet)?;
            let g = fuse_features(tape, alpha, x)?;
            Ok(Branch { p_node: Some(p_node), triplet: Some(triplet), alpha: Some(alpha), g })
        };
        let obj = branch(tape, x_obj, QuestionRole::Object, [EdgeRole::ObjObj, EdgeRole::ObjText], q.obj_logits)?;
        let text = branch(tape, x_text, QuestionRole::Text, [EdgeRole::TextText, EdgeRole::TextObj], q.text_logits)?;

        let ocr = match (x_text, text.alpha) {
            (Some(x), Some(a)) => Some(weighted_ocr(tape, a, x)?),
            _ => None,
        };
        let inputs = build_global_inputs(tape, bp, &q, obj.g, text.g, ocr)?;
        let ctx = encode_inputs(tape, bp, cfg, &inputs)?;
        Ok(SceneVars { question: q, x_obj, x_text, edges, obj, text, ctx })
    }

    /// Teacher-forced BCE loss of one instance.
    pub fn instance_loss(&self, tape: &mut Tape, bp: &BoundParams<'_>, enc: &EncodedInstance) -> Result<Var> {
        let targets = enc.targets.as_ref().ok_or_else(|| Error::Instance(format!("{}: no answers to train on", enc.id)))?;
        let scene = self.forward_scene(tape, bp, enc)?;
        let scores = teacher_forced_scores(tape, bp, &self.config, &scene.ctx, targets)?;
        bce_loss(tape, scores, &targets.valid_rows(), targets.loss_mask())
    }

    /// Mean instance loss over `batch`.
    pub fn batch_loss(&self, tape: &mut Tape, bp: &BoundParams<'_>, batch: &[&EncodedInstance]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut total: Option<Var> = None;
        for enc in batch {
            let l = self.instance_loss(tape, bp, enc)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        Ok(tape.scale(total.expect("nonempty"), 1.0 / batch.len() as f64))
    }

    pub fn decode(&self, enc: &EncodedInstance) -> Result<DecodedAnswer> {
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let scene = self.forward_scene(&mut tape, &bp, enc)?;
        greedy_decode(&mut tape, &bp, &self.config, &scene.ctx, &self.answer_vocab, &enc.ocr_tokens)
    }

    /// Attention values and the decode trace for one instance.
    pub fn inspect(&self, enc: &EncodedInstance) -> Result<AttentionDump> {
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let scene = self.forward_scene(&mut tape, &bp, enc)?;
        let decoded = greedy_decode(&mut tape, &bp, &self.config, &scene.ctx, &self.answer_vocab, &enc.ocr_tokens)?;
        let row = |v: Option<Var>| v.map(|v| tape.value(v).data().to_vec());
        let qv = scene.question.values(&tape);
        let question = QuestionRole::ALL
            .iter()
            .map(|r| RoleAttention { role: r.tag(), tokens: qv.attention[r.index()][..enc.tokens.len()].to_vec() })
            .collect();
        let mut node = vec![
            NodeRoleAttention { role: "o", p: row(scene.obj.p_node) },
            NodeRoleAttention { role: "t", p: row(scene.text.p_node) },
        ];
        let mut edge_roles = Vec::new();
        for role in EdgeRole::ALL {
            let set = enc.graph.edge_set(role);
            let e = scene.edges[role.index()].as_ref();
            node.push(NodeRoleAttention { role: role.tag(), p: e.map(|e| tape.value(e.p).data().to_vec()) });
            let q = e.map(|e| e.edge_weights(&tape));
            edge_roles.push(EdgeRoleAttention {
                role: role.tag(),
                enabled: e.is_some(),
                edges: set
                    .edges
                    .iter()
                    .enumerate()
                    .map(|(i, ed)| EdgeWeight { source: ed.source, target: ed.target, q: q.as_ref().map(|q| q[i]) })
                    .collect(),
            });
        }
        let tri = |v: Option<Var>| v.map(|v| tape.value(v).data().to_vec());
        Ok(AttentionDump {
            id: enc.id.clone(),
            question,
            raw_obj_triplet: qv.obj_triplet.to_vec(),
            raw_text_triplet: qv.text_triplet.to_vec(),
            obj_triplet: tri(scene.obj.triplet),
            text_triplet: tri(scene.text.triplet),
            node,
            edges: edge_roles,
            alpha_obj: row(scene.obj.alpha),
            alpha_text: row(scene.text.alpha),
            ocr_tokens: enc.ocr_tokens.clone(),
            answer: decoded.answer(),
            trace: decoded.picks.iter().map(|p| p.tag_with_end()).collect(),
        })
    }
}

/// Guiding-vector role used by an edge role.
pub fn edge_question_role(role: EdgeRole) -> QuestionRole {
    match role {
        EdgeRole::ObjObj => QuestionRole::ObjObj,
        EdgeRole::ObjText => QuestionRole::ObjText,
        EdgeRole::TextText => QuestionRole::TextText,
        EdgeRole::TextObj => QuestionRole::TextObj,
    }
}

/// One side (object or text) of the weighting and fusion step.
#[derive(Clone, Debug)]
pub struct Branch {
    pub p_node: Option<Var>,
    /// Triplet after dropping unavailable or disabled roles.
    pub triplet: Option<Var>,
    pub alpha: Option<Var>,
    pub g: Var,
}

#[derive(Clone, Debug)]
pub struct SceneVars {
    pub question: QuestionVars,
    pub x_obj: Option<Var>,
    pub x_text: Option<Var>,
    /// Indexed by [`EdgeRole::index`]; `None` for disabled or empty roles.
    pub edges: [Option<EdgeAttentionVars>; 4],
    pub obj: Branch,
    pub text: Branch,
    pub ctx: ContextOutputs,
}

impl decoder::Pick {
    fn tag_with_end(self) -> String {
        match self {
            decoder::Pick::Vocab(crate::vocab::END_ID) => String::from("end"),
            p => p.tag(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct RoleAttention {
    pub role: &'static str,
    pub tokens: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct NodeRoleAttention {
    pub role: &'static str,
    pub p: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EdgeWeight {
    pub source: usize,
    pub target: usize,
    pub q: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EdgeRoleAttention {
    pub role: &'static str,
    pub enabled: bool,
    pub edges: Vec<EdgeWeight>,
}

/// Everything the inspect command prints for one instance.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AttentionDump {
    pub id: String,
    /// Token attention for the six question roles.
    pub question: Vec<RoleAttention>,
    pub raw_obj_triplet: Vec<f64>,
    pub raw_text_triplet: Vec<f64>,
    pub obj_triplet: Option<Vec<f64>>,
    pub text_triplet: Option<Vec<f64>>,
    /// `p` for `o`, `t` and the four edge roles.
    pub node: Vec<NodeRoleAttention>,
    pub edges: Vec<EdgeRoleAttention>,
    pub alpha_obj: Option<Vec<f64>>,
    pub alpha_text: Option<Vec<f64>>,
    pub ocr_tokens: Vec<String>,
    pub answer: String,
    /// `vocab`, `copy:i` or `end` per step.
    pub trace: Vec<String>,
}
