//! Iterative answer decoder: a transformer over global and OCR rows, a
//! vocabulary branch and a copy branch, multi-label targets and BCE loss.
//!
//! Sequence layout is `[s̄_o, s̄_t, g_obj, g_text, ocr_1..ocr_M, dec_1..dec_n]`.
//! Only decoder rows get position codes. `dec_1` is a learned start row; a
//! later row holds the layer-normed embedding of the previous pick. Step 1 is
//! scored from the fused global vector rather than from `dec_1`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::metrics::normalize_answer;
use crate::nn::{add_layer_norm, layer_norm, linear, sinusoidal, Init};
use crate::numerics::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::qencoder::{QuestionRole, QuestionVars};
use crate::transformer::{decode_rows, encode_context, init_stack, ContextStates, StackSpec};
use crate::vocab::{Vocabulary, END_ID, UNK_ID};

pub const STACK_PREFIX: &str = "dec.layer";

pub fn stack_spec(cfg: &ModelConfig) -> StackSpec<'static> {
    StackSpec { prefix: STACK_PREFIX, layers: cfg.layers, heads: cfg.heads, ln_eps: cfg.ln_eps }
}

pub fn init_params(init: &mut Init, ps: &mut ParamSet, cfg: &ModelConfig, answer_vocab: usize) -> Result<()> {
    let d = cfg.d;
    init.linear(ps, "dec.proj_so", 3 * d, d, true)?;
    init.linear(ps, "dec.proj_st", 3 * d, d, true)?;
    init_stack(init, ps, STACK_PREFIX, cfg.layers, d, cfg.ffn_width)?;
    ps.insert("dec.begin", init.normal(1, d, 1.0))?;
    ps.insert("dec.answer_embed", init.normal(answer_vocab, d, 1.0))?;
    add_layer_norm(ps, "dec.ln_voc", d)?;
    add_layer_norm(ps, "dec.ln_ocr", d)?;
    init.linear(ps, "score.wg", 2 * d, d, true)?;
    init.linear(ps, "score.voc", d, answer_vocab, true)?;
    init.linear(ps, "score.cq", d, d, true)?;
    init.linear(ps, "score.ck", d, d, true)
}

/// Transformer inputs before the decoder rows.
#[derive(Clone, Copy, Debug)]
pub struct DecoderInputs {
    pub s_bar_o: Var,
    pub s_bar_t: Var,
    pub g_obj: Var,
    pub g_text: Var,
    /// `M x d` α-weighted OCR rows; `None` when the scene has no text.
    pub ocr: Option<Var>,
}

/// `α_i x̂_i` for every OCR row.
pub fn weighted_ocr(tape: &mut Tape, alpha_text: Var, x_text: Var) -> Result<Var> {
    let col = tape.transpose(alpha_text);
    tape.mul_col(x_text, col)
}

/// Projects `[s_o; s_oo; s_ot]` and `[s_t; s_tt; s_to]` to width d.
pub fn build_global_inputs(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    q: &QuestionVars,
    g_obj: Var,
    g_text: Var,
    ocr: Option<Var>,
) -> Result<DecoderInputs> {
    use QuestionRole::*;
    let g = |r: QuestionRole| q.guide[r.index()];
    let so = tape.concat_cols(&[g(Object), g(ObjObj), g(ObjText)])?;
    let st = tape.concat_cols(&[g(Text), g(TextText), g(TextObj)])?;
    let s_bar_o = linear(tape, bp, "dec.proj_so", so)?;
    let s_bar_t = linear(tape, bp, "dec.proj_st", st)?;
    Ok(DecoderInputs { s_bar_o, s_bar_t, g_obj, g_text, ocr })
}

/// Transformer outputs of the global and OCR rows.
#[derive(Clone, Debug)]
pub struct ContextOutputs {
    pub states: ContextStates,
    pub s_o: Var,
    pub s_t: Var,
    pub g_obj: Var,
    pub g_text: Var,
    pub ocr: Option<Var>,
    pub n_ocr: usize,
}

pub fn encode_inputs(tape: &mut Tape, bp: &BoundParams<'_>, cfg: &ModelConfig, inputs: &DecoderInputs) -> Result<ContextOutputs> {
    let mut rows = vec![inputs.s_bar_o, inputs.s_bar_t, inputs.g_obj, inputs.g_text];
    rows.extend(inputs.ocr);
    let seq = tape.concat_rows(&rows)?;
    let states = encode_context(tape, bp, stack_spec(cfg), seq)?;
    let out = states.output;
    let n_ocr = inputs.ocr.map(|o| tape.value(o).rows()).unwrap_or(0);
    let row = |tape: &mut Tape, r| tape.slice_rows(out, r, 1);
    let s_o = row(tape, 0)?;
    let s_t = row(tape, 1)?;
    let g_obj = row(tape, 2)?;
    let g_text = row(tape, 3)?;
    let ocr = if n_ocr > 0 { Some(tape.slice_rows(out, 4, n_ocr)?) } else { None };
    Ok(ContextOutputs { states, s_o, s_t, g_obj, g_text, ocr, n_ocr })
}

/// One decoding choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pick {
    Vocab(usize),
    Copy(usize),
}

impl Pick {
    pub fn column(self, vocab_size: usize) -> usize {
        match self {
            Pick::Vocab(i) => i,
            Pick::Copy(i) => vocab_size + i,
        }
    }

    pub fn from_column(col: usize, vocab_size: usize) -> Self {
        if col < vocab_size {
            Pick::Vocab(col)
        } else {
            Pick::Copy(col - vocab_size)
        }
    }

    /// `vocab` or `copy:i`.
    pub fn tag(self) -> String {
        match self {
            Pick::Vocab(_) => "vocab".to_string(),
            Pick::Copy(i) => format!("copy:{i}"),
        }
    }
}

/// Decoder input rows: the start row followed by one row per previous pick.
/// A vocabulary pick feeds its answer embedding, a copy pick feeds the
/// transformer output of that OCR row.
pub fn decoder_inputs(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    cfg: &ModelConfig,
    ctx: &ContextOutputs,
    previous: &[Pick],
) -> Result<Var> {
    let mut rows = vec![bp.var("dec.begin")?];
    let table = bp.var("dec.answer_embed")?;
    let v = tape.value(table).rows();
    for &p in previous {
        let row = match p {
            Pick::Vocab(i) => {
                if i >= v {
                    return Err(Error::TokenOutOfRange { id: i, size: v });
                }
                let e = tape.gather_rows(table, vec![Some(i)])?;
                layer_norm(tape, bp, "dec.ln_voc", e, cfg.ln_eps)?
            }
            Pick::Copy(i) => {
                let ocr = ctx.ocr.filter(|_| i < ctx.n_ocr).ok_or(Error::TokenOutOfRange { id: i, size: ctx.n_ocr })?;
                let e = tape.gather_rows(ocr, vec![Some(i)])?;
                layer_norm(tape, bp, "dec.ln_ocr", e, cfg.ln_eps)?
            }
        };
        rows.push(row);
    }
    let n = rows.len();
    let x = tape.concat_rows(&rows)?;
    let pe: Vec<f64> = (0..n).flat_map(|p| sinusoidal(p, cfg.d)).collect();
    let pe = tape.constant(Tensor::from_vec(n, cfg.d, pe)?);
    tape.add(x, pe)
}

/// Transformer outputs for the decoder rows.
pub fn run_decoder(tape: &mut Tape, bp: &BoundParams<'_>, cfg: &ModelConfig, ctx: &ContextOutputs, dec: Var) -> Result<Var> {
    decode_rows(tape, bp, stack_spec(cfg), &ctx.states, dec)
}

/// `W_g [g̃_obj ∘ s̃_o ; g̃_text ∘ s̃_t] + b`.
pub fn first_step_query(tape: &mut Tape, bp: &BoundParams<'_>, ctx: &ContextOutputs) -> Result<Var> {
    let a = tape.mul(ctx.g_obj, ctx.s_o)?;
    let b = tape.mul(ctx.g_text, ctx.s_t)?;
    let cat = tape.concat_cols(&[a, b])?;
    linear(tape, bp, "score.wg", cat)
}

/// `n x (V + m_max)` logits: vocabulary branch, then the bilinear copy branch
/// against each OCR output row, then zero padding up to `m_max`.
pub fn score_rows(tape: &mut Tape, bp: &BoundParams<'_>, h: Var, ocr: Option<Var>, m_max: usize) -> Result<Var> {
    let n = tape.value(h).rows();
    let d = tape.value(h).cols();
    let voc = linear(tape, bp, "score.voc", h)?;
    let mut parts = vec![voc];
    let mut m = 0;
    if let Some(ocr) = ocr {
        m = tape.value(ocr).rows();
        if m > m_max {
            return Err(Error::Invalid(format!("{m} OCR rows exceed the cap of {m_max}")));
        }
        let cq = linear(tape, bp, "score.cq", h)?;
        let ck = linear(tape, bp, "score.ck", ocr)?;
        let copy = tape.matmul_bt(cq, ck)?;
        parts.push(tape.scale(copy, 1.0 / libm::sqrt(d as f64)));
    }
    if m < m_max {
        parts.push(tape.constant(Tensor::zeros(n, m_max - m)));
    }
    tape.concat_cols(&parts)
}

/// Valid score columns: all vocabulary entries and the first `n_ocr` copy slots.
pub fn column_mask(vocab_size: usize, n_ocr: usize, m_max: usize) -> Vec<bool> {
    (0..vocab_size + m_max).map(|c| c < vocab_size + n_ocr).collect()
}

/// Multi-label decoding targets for one answer.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMatrix {
    /// `L x (V + m_max)`.
    pub y: Tensor,
    pub step_mask: Vec<bool>,
    /// Number of valid steps, including the end step.
    pub steps: usize,
    /// Set when the answer had more than `L - 1` words.
    pub truncated: bool,
    pub vocab_size: usize,
    pub n_ocr: usize,
}

pub fn build_targets(
    answer: &str,
    vocab: &Vocabulary,
    ocr_tokens: &[String],
    max_steps: usize,
    m_max: usize,
) -> Result<TargetMatrix> {
    let norm = normalize_answer(answer);
    if norm.is_empty() {
        return Err(Error::Invalid("answer is empty".into()));
    }
    if ocr_tokens.len() > m_max {
        return Err(Error::Invalid(format!("{} OCR tokens exceed the cap of {m_max}", ocr_tokens.len())));
    }
    let v = vocab.len();
    let mut words: Vec<&str> = norm.split(' ').collect();
    let truncated = words.len() + 1 > max_steps;
    words.truncate(max_steps - 1);
    let ocr_norm: Vec<String> = ocr_tokens.iter().map(|t| normalize_answer(t)).collect();
    let mut y = Tensor::zeros(max_steps, v + m_max);
    for (step, w) in words.iter().enumerate() {
        if let Some(c) = vocab.get(w) {
            y.set(step, c, 1.0);
        }
        for (i, t) in ocr_norm.iter().enumerate() {
            if t == w {
                y.set(step, v + i, 1.0);
            }
        }
    }
    y.set(words.len(), END_ID, 1.0);
    let steps = words.len() + 1;
    Ok(TargetMatrix {
        y,
        step_mask: (0..max_steps).map(|s| s < steps).collect(),
        steps,
        truncated,
        vocab_size: v,
        n_ocr: ocr_tokens.len(),
    })
}

impl TargetMatrix {
    pub fn columns(&self) -> usize {
        self.y.cols()
    }

    /// Teacher-forced picks for steps `1..steps`: the first positive column
    /// of each earlier row, or unknown when a row has none.
    pub fn teacher_picks(&self) -> Vec<Pick> {
        (0..self.steps.saturating_sub(1))
            .map(|r| {
                self.y
                    .row_slice(r)
                    .iter()
                    .position(|&v| v > 0.0)
                    .map(|c| Pick::from_column(c, self.vocab_size))
                    .unwrap_or(Pick::Vocab(UNK_ID))
            })
            .collect()
    }

    /// The first `steps` rows.
    pub fn valid_rows(&self) -> Tensor {
        let c = self.columns();
        Tensor::from_vec(self.steps, c, self.y.data()[..self.steps * c].to_vec()).expect("sized")
    }

    /// Loss mask over [`valid_rows`](Self::valid_rows): padded copy columns are excluded.
    pub fn loss_mask(&self) -> Vec<bool> {
        let cols = column_mask(self.vocab_size, self.n_ocr, self.columns() - self.vocab_size);
        (0..self.steps).flat_map(|_| cols.iter().copied()).collect()
    }
}

/// Mean masked sigmoid cross-entropy between `y_pred` logits and targets.
pub fn bce_loss(tape: &mut Tape, y_pred: Var, y_gt: &Tensor, mask: Vec<bool>) -> Result<Var> {
    tape.bce_with_logits(y_pred, y_gt, mask)
}

/// Teacher-forced logits for the valid steps of `targets`.
pub fn teacher_forced_scores(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    cfg: &ModelConfig,
    ctx: &ContextOutputs,
    targets: &TargetMatrix,
) -> Result<Var> {
    let h1 = first_step_query(tape, bp, ctx)?;
    let h = if targets.steps > 1 {
        let dec = decoder_inputs(tape, bp, cfg, ctx, &targets.teacher_picks())?;
        let out = run_decoder(tape, bp, cfg, ctx, dec)?;
        let rest = tape.slice_rows(out, 1, targets.steps - 1)?;
        tape.concat_rows(&[h1, rest])?
    } else {
        h1
    };
    score_rows(tape, bp, h, ctx.ocr, cfg.max_texts)
}

/// Greedy decoding result.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedAnswer {
    pub words: Vec<String>,
    /// Every pick, including a final end pick when decoding stopped on it.
    pub picks: Vec<Pick>,
}

impl DecodedAnswer {
    pub fn answer(&self) -> String {
        self.words.join(" ")
    }

    /// Source tag per emitted word.
    pub fn sources(&self) -> Vec<String> {
        self.picks.iter().filter(|p| **p != Pick::Vocab(END_ID)).map(|p| p.tag()).collect()
    }
}

fn argmax_valid(row: &[f64], mask: &[bool]) -> usize {
    let mut best = None;
    for (c, (&v, &m)) in row.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c).unwrap_or(END_ID)
}

/// Greedy argmax decoding for up to `max_decode_steps` steps.
pub fn greedy_decode(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    cfg: &ModelConfig,
    ctx: &ContextOutputs,
    vocab: &Vocabulary,
    ocr_tokens: &[String],
) -> Result<DecodedAnswer> {
    let v = vocab.len();
    let mask = column_mask(v, ctx.n_ocr, cfg.max_texts);
    let mut picks = Vec::new();
    let mut words = Vec::new();
    for step in 0..cfg.max_decode_steps {
        let h = if step == 0 {
            first_step_query(tape, bp, ctx)?
        } else {
            let dec = decoder_inputs(tape, bp, cfg, ctx, &picks)?;
            let out = run_decoder(tape, bp, cfg, ctx, dec)?;
            tape.slice_rows(out, step, 1)?
        };
        let scores = score_rows(tape, bp, h, ctx.ocr, cfg.max_texts)?;
        let pick = Pick::from_column(argmax_valid(tape.value(scores).data(), &mask), v);
        picks.push(pick);
        match pick {
            Pick::Vocab(END_ID) => break,
            Pick::Vocab(i) => words.push(vocab.word(i).unwrap_or_default().to_string()),
            Pick::Copy(i) => words.push(ocr_tokens[i].clone()),
        }
    }
    Ok(DecodedAnswer { words, picks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::log_sigmoid;

    fn toks(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn target_row_collects_vocab_and_ocr_matches() {
        let vocab = Vocabulary::answer(&["stop", "yes"]);
        let ocr = toks(&["STOP", "go", "stop"]);
        let t = build_targets("Stop", &vocab, &ocr, 4, 5).unwrap();
        let v = vocab.len();
        let ones: Vec<usize> = (0..v + 5).filter(|&c| t.y.get(0, c) == 1.0).collect();
        assert_eq!(ones, [vocab.get("stop").unwrap(), v, v + 2]);
        assert_eq!(t.y.get(1, END_ID), 1.0);
        assert_eq!(t.step_mask, [true, true, false, false]);
        assert_eq!(t.teacher_picks(), [Pick::Vocab(2)]);
    }

    #[test]
    fn unmatched_word_gives_zero_row() {
        let vocab = Vocabulary::answer(&["yes"]);
        let t = build_targets("maybe", &vocab, &toks(&["no"]), 3, 2).unwrap();
        assert!(t.y.row_slice(0).iter().all(|v| *v == 0.0));
        assert_eq!(t.teacher_picks(), [Pick::Vocab(UNK_ID)]);
    }

    #[test]
    fn yes_at_column_seven() {
        let words = ["a", "b", "c", "d", "e", "yes"];
        let vocab = Vocabulary::answer(&words);
        assert_eq!(vocab.get("yes"), Some(7));
        let t = build_targets("yes", &vocab, &toks(&["no"]), 12, 50).unwrap();
        let ones: Vec<usize> = (0..t.columns()).filter(|&c| t.y.get(0, c) == 1.0).collect();
        assert_eq!(ones, [7]);
    }

    #[test]
    fn long_answers_are_truncated() {
        let vocab = Vocabulary::answer(&["a"]);
        let t = build_targets("a a a a", &vocab, &[], 3, 0).unwrap();
        assert!(t.truncated);
        assert_eq!(t.steps, 3);
        assert_eq!(t.y.get(2, END_ID), 1.0);
        assert!(build_targets("  ", &vocab, &[], 3, 0).is_err());
    }

    #[test]
    fn bce_closed_forms() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let l = bce_loss(&mut tape, x, &Tensor::scalar(1.0), vec![true]).unwrap();
        assert!((tape.value(l).item() - core::f64::consts::LN_2).abs() < 1e-12);
        let l = bce_loss(&mut tape, x, &Tensor::scalar(0.0), vec![true]).unwrap();
        assert!((tape.value(l).item() - core::f64::consts::LN_2).abs() < 1e-12);
        let big = tape.constant(Tensor::scalar(40.0));
        let l = bce_loss(&mut tape, big, &Tensor::scalar(1.0), vec![true]).unwrap();
        assert!(tape.value(l).item() < 1e-15);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut tape = Tape::new();
        let xs: Vec<f64> = (0..41).map(|i| -10.0 + 0.5 * i as f64).collect();
        let ys: Vec<f64> = (0..41).map(|i| (i % 2) as f64).collect();
        let x = tape.constant(Tensor::row(xs.clone()));
        let l = bce_loss(&mut tape, x, &Tensor::row(ys.clone()), vec![true; 41]).unwrap();
        let naive: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let p = 1.0 / (1.0 + (-x).exp());
                -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / 41.0;
        assert!((tape.value(l).item() - naive).abs() < 1e-8);
        assert!((log_sigmoid(0.0) + core::f64::consts::LN_2).abs() < 1e-15);
    }

    fn scoring_params(d: usize, v: usize) -> ParamSet {
        let mut ps = ParamSet::new();
        let mut init = Init::new(5);
        init.linear(&mut ps, "score.voc", d, v, true).unwrap();
        init.linear(&mut ps, "score.cq", d, d, true).unwrap();
        init.linear(&mut ps, "score.ck", d, d, true).unwrap();
        ps
    }

    fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
        (0..w.cols()).map(|j| b.get(0, j) + x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum::<f64>()).collect()
    }

    #[test]
    fn score_rows_matches_hand_computation() {
        let (d, v, m_max) = (3, 4, 4);
        let ps = scoring_params(d, v);
        let h = [0.3, -1.2, 0.7];
        let ocr = [[1.0, 0.5, -0.5], [0.0, 2.0, 1.0]];
        let mut tape = Tape::new();
        let bp = ps.bind_frozen(&mut tape);
        let hv = tape.constant(Tensor::row(h.to_vec()));
        let ov = tape.constant(Tensor::from_rows(&ocr.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let s = score_rows(&mut tape, &bp, hv, Some(ov), m_max).unwrap();
        let got = tape.value(s).clone();
        assert_eq!(got.shape(), [1, v + m_max]);

        let p = |n: &str| ps.get(n).unwrap();
        let voc = affine(&h, p("score.voc.w"), p("score.voc.b"));
        let q = affine(&h, p("score.cq.w"), p("score.cq.b"));
        for (c, want) in voc.iter().enumerate() {
            assert!((got.get(0, c) - want).abs() < 1e-12);
        }
        for (i, row) in ocr.iter().enumerate() {
            let k = affine(row, p("score.ck.w"), p("score.ck.b"));
            let want = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
            assert!((got.get(0, v + i) - want).abs() < 1e-12);
        }
        assert_eq!(got.get(0, v + 2), 0.0);
        assert_eq!(got.get(0, v + 3), 0.0);
        assert_eq!(column_mask(v, 2, m_max), [true, true, true, true, true, true, false, false]);
    }

    #[test]
    fn zero_query_gives_zero_logits_without_biases() {
        let (d, v) = (4, 3);
        let mut ps = scoring_params(d, v);
        for n in ["score.voc.b", "score.cq.b", "score.ck.b"] {
            ps.get_mut(n).unwrap().data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let bp = ps.bind_frozen(&mut tape);
        let h = tape.constant(Tensor::zeros(2, d));
        let ocr = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5, 3.0]]).unwrap());
        let s = score_rows(&mut tape, &bp, h, Some(ocr), 2).unwrap();
        assert!(tape.value(s).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn orthogonal_copy_query_gives_zero_copy_logit() {
        let (d, v) = (3, 2);
        let mut ps = scoring_params(d, v);
        *ps.get_mut("score.cq.w").unwrap() = Tensor::identity(d);
        *ps.get_mut("score.ck.w").unwrap() = Tensor::identity(d);
        ps.get_mut("score.cq.b").unwrap().data_mut().fill(0.0);
        ps.get_mut("score.ck.b").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let bp = ps.bind_frozen(&mut tape);
        let h = tape.constant(Tensor::row(vec![1.0, 0.0, 0.0]));
        let ocr = tape.constant(Tensor::from_rows(&[vec![0.0, 2.0, -1.0], vec![3.0, 0.0, 0.0]]).unwrap());
        let s = score_rows(&mut tape, &bp, h, Some(ocr), 2).unwrap();
        let got = tape.value(s);
        assert_eq!(got.get(0, v), 0.0);
        assert!((got.get(0, v + 1) - 3.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    fn scene() -> (crate::model::Model, crate::model::EncodedInstance) {
        crate::checks::gradcheck_fixture(crate::checks::gradcheck_config(), 11).unwrap()
    }

    #[test]
    fn first_step_depends_on_concatenation_order_and_global_rows() {
        let (model, enc) = scene();
        let mut tape = Tape::new();
        let bp = model.params.bind_frozen(&mut tape);
        let ctx = model.forward_scene(&mut tape, &bp, &enc).unwrap().ctx;
        let h = first_step_query(&mut tape, &bp, &ctx).unwrap();
        let base = tape.value(h).clone();

        let swapped = ContextOutputs { g_obj: ctx.g_text, g_text: ctx.g_obj, s_o: ctx.s_t, s_t: ctx.s_o, ..ctx.clone() };
        let hs = first_step_query(&mut tape, &bp, &swapped).unwrap();
        assert_ne!(tape.value(hs), &base);

        let bump = tape.constant(Tensor::row(vec![0.25; model.config.d]));
        let g2 = tape.add(ctx.g_obj, bump).unwrap();
        let moved = ContextOutputs { g_obj: g2, ..ctx.clone() };
        let hm = first_step_query(&mut tape, &bp, &moved).unwrap();
        let s0 = score_rows(&mut tape, &bp, h, ctx.ocr, model.config.max_texts).unwrap();
        let s1 = score_rows(&mut tape, &bp, hm, ctx.ocr, model.config.max_texts).unwrap();
        assert_ne!(tape.value(s0), tape.value(s1));
    }

    #[test]
    fn ocr_rows_reach_the_global_outputs() {
        let (model, enc) = scene();
        let cfg = &model.config;
        let mut tape = Tape::new();
        let bp = model.params.bind_frozen(&mut tape);
        let sv = model.forward_scene(&mut tape, &bp, &enc).unwrap();
        let inputs = build_global_inputs(&mut tape, &bp, &sv.question, sv.obj.g, sv.text.g, None).unwrap();
        let ocr = sv.x_text.unwrap();
        let with = encode_inputs(&mut tape, &bp, cfg, &DecoderInputs { ocr: Some(ocr), ..inputs }).unwrap();
        let n = tape.value(ocr).rows();
        let noise = tape.constant(Tensor::from_vec(n, cfg.d, (0..n * cfg.d).map(|i| (i as f64).sin()).collect()).unwrap());
        let other = tape.add(ocr, noise).unwrap();
        let moved = encode_inputs(&mut tape, &bp, cfg, &DecoderInputs { ocr: Some(other), ..inputs }).unwrap();
        assert_ne!(tape.value(with.g_obj), tape.value(moved.g_obj));
        assert_ne!(tape.value(with.s_t), tape.value(moved.s_t));
    }

    #[test]
    fn copy_pick_feeds_the_updated_ocr_row() {
        let (model, enc) = scene();
        let cfg = &model.config;
        let mut tape = Tape::new();
        let bp = model.params.bind_frozen(&mut tape);
        let ctx = model.forward_scene(&mut tape, &bp, &enc).unwrap().ctx;
        let dec = decoder_inputs(&mut tape, &bp, cfg, &ctx, &[Pick::Copy(1)]).unwrap();
        let row = tape.slice_rows(ctx.ocr.unwrap(), 1, 1).unwrap();
        let want = layer_norm(&mut tape, &bp, "dec.ln_ocr", row, cfg.ln_eps).unwrap();
        let got = tape.value(dec).row_slice(1).to_vec();
        let pe = sinusoidal(1, cfg.d);
        for c in 0..cfg.d {
            assert!((got[c] - tape.value(want).get(0, c) - pe[c]).abs() < 1e-12);
        }
        assert!(decoder_inputs(&mut tape, &bp, cfg, &ctx, &[Pick::Copy(ctx.n_ocr)]).is_err());
    }

    #[test]
    fn causal_mask_keeps_earlier_steps_bitwise() {
        for step in [2, 5, 12] {
            let probe = crate::checks::causal_mask_probe(step, 0).unwrap();
            assert!(probe.earlier_identical, "step {step}");
            assert!(probe.perturbed_changed, "step {step}");
        }
        assert!(crate::checks::causal_mask_probe(1, 0).is_err());
    }

    #[test]
    fn argmax_skips_masked_columns() {
        assert_eq!(argmax_valid(&[0.1, 0.5, 9.0], &[true, true, false]), 1);
        assert_eq!(argmax_valid(&[0.5, 0.5], &[true, true]), 0);
    }
}
