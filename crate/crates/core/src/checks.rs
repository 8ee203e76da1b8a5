//! Small fixtures for whole-model self-checks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, RelationSet};
use crate::decoder::{decoder_inputs, run_decoder, first_step_query, score_rows, Pick};
use crate::error::{Error, Result};
use crate::features::{template_vocabulary, Instance, ObjectRegion, OcrToken};
use crate::graph::{BoundingBox, EdgeRole};
use crate::model::{EncodedInstance, Model};
use crate::numerics::{check_gradients, GradCheckOptions, GradCheckReport, Tape, Tensor};
use crate::vocab::Vocabulary;

/// d=8, k=2, L=3 with two heads, a 16-wide feed-forward layer and caps
/// sized to the fixture (3 objects, 3 tokens, questions of at most 8 words).
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        k: 2,
        heads: 2,
        ffn_width: 16,
        max_decode_steps: 3,
        max_objects: 3,
        max_texts: 3,
        max_question_len: 8,
        ..ModelConfig::desk()
    }
}

fn random_box(rng: &mut ChaCha8Rng, w: f64, h: f64) -> BoundingBox {
    let bw = rng.random_range(0.1..0.4) * w;
    let bh = rng.random_range(0.1..0.4) * h;
    let x = rng.random_range(0.0..w - bw);
    let y = rng.random_range(0.0..h - bh);
    BoundingBox { x_tl: x, y_tl: y, x_br: x + bw, y_br: y + bh }
}

/// Random scene with `n_obj` objects and `n_text` tokens whose answer is
/// "<first token> yes", so both the copy and the vocabulary branch get targets.
pub fn random_instance(seed: u64, n_obj: usize, n_text: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (400.0, 300.0);
    let vocab = template_vocabulary();
    let q_len = rng.random_range(2..=6);
    let question = (0..q_len).map(|_| vocab.choose(&mut rng).expect("nonempty").to_string()).collect();
    let objects = (0..n_obj)
        .map(|_| ObjectRegion { bbox: random_box(&mut rng, w, h), label: Some(format!("obj{}", rng.random_range(0..5))), appearance: None })
        .collect();
    let texts: Vec<OcrToken> = (0..n_text).map(|i| OcrToken::new(format!("tok{i}x{}", rng.random_range(0..100)), random_box(&mut rng, w, h))).collect();
    let answer = match texts.first() {
        Some(t) => format!("{} yes", t.token),
        None => "yes".to_string(),
    };
    Instance { id: format!("random-{seed}"), width: w, height: h, question, objects, texts, answers: alloc::vec![answer; 10] }
}

/// Model and instance used by the whole-model gradient check.
pub fn gradcheck_fixture(config: ModelConfig, seed: u64) -> Result<(Model, EncodedInstance)> {
    let qv = Vocabulary::question(&template_vocabulary());
    let av = Vocabulary::answer(&["yes", "no"]);
    let model = Model::new(config, qv, av, seed)?;
    let inst = random_instance(seed.wrapping_add(17), 3, 3);
    let enc = model.encode_instance(&inst)?;
    Ok((model, enc))
}

/// Central-difference check of every parameter of the full model on one instance.
pub fn full_model_gradcheck(config: ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (model, enc) = gradcheck_fixture(config, seed)?;
    check_gradients(|tape, bp| model.instance_loss(tape, bp, &enc), &model.params, opts)
}

/// One line per failing block.
pub fn describe_failures(report: &GradCheckReport) -> Vec<String> {
    report
        .failures()
        .map(|b| {
            format!(
                "{}: max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
                b.name, b.max_rel_err, b.worst_index, b.analytic, b.numeric
            )
        })
        .collect()
}

/// Outcome of perturbing the decoder input consumed at one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CausalProbe {
    /// Scores of every earlier step are bitwise identical.
    pub earlier_identical: bool,
    /// Scores of the perturbed step moved.
    pub perturbed_changed: bool,
}

/// Scores all `L = 12` steps under a fixed pick sequence, then again after
/// adding noise to the decoder input row read at `step` (1-based, >= 2).
pub fn causal_mask_probe(step: usize, seed: u64) -> Result<CausalProbe> {
    let config = ModelConfig { max_decode_steps: 12, ..gradcheck_config() };
    let steps = config.max_decode_steps;
    if step < 2 || step > steps {
        return Err(Error::Invalid(format!("step must lie in 2..={steps}, got {step}")));
    }
    let (model, enc) = gradcheck_fixture(config, seed)?;
    let cfg = &model.config;
    let mut tape = Tape::new();
    let bp = model.params.bind_frozen(&mut tape);
    let ctx = model.forward_scene(&mut tape, &bp, &enc)?.ctx;
    let picks: Vec<Pick> =
        (0..steps - 1).map(|i| if i % 2 == 0 { Pick::Copy(i % ctx.n_ocr.max(1)) } else { Pick::Vocab(2) }).collect();
    let dec = decoder_inputs(&mut tape, &bp, cfg, &ctx, &picks)?;
    let h1 = first_step_query(&mut tape, &bp, &ctx)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca05a1);
    let mut noise = Tensor::zeros(steps, cfg.d);
    for c in 0..cfg.d {
        noise.set(step - 1, c, rng.random_range(-1.0..1.0));
    }
    let noise = tape.constant(noise);
    let bumped = tape.add(dec, noise)?;

    let mut scores = Vec::with_capacity(2);
    for input in [dec, bumped] {
        let out = run_decoder(&mut tape, &bp, cfg, &ctx, input)?;
        let rest = tape.slice_rows(out, 1, steps - 1)?;
        let h = tape.concat_rows(&[h1, rest])?;
        let s = score_rows(&mut tape, &bp, h, ctx.ocr, cfg.max_texts)?;
        scores.push(tape.value(s).clone());
    }
    let same_row = |r: usize| {
        scores[0].row_slice(r).iter().zip(scores[1].row_slice(r)).all(|(a, b)| a.to_bits() == b.to_bits())
    };
    Ok(CausalProbe { earlier_identical: (0..step - 1).all(same_row), perturbed_changed: !same_row(step - 1) })
}

/// Summary of [`normalization_audit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationAudit {
    pub instances: usize,
    /// Probability vectors inspected.
    pub distributions: usize,
    /// Largest `|Σ - 1|` over all of them.
    pub max_sum_error: f64,
    /// Masked entries that were not exactly zero.
    pub masked_nonzero: usize,
}

#[derive(Default)]
struct Audit {
    distributions: usize,
    max_sum_error: f64,
    masked_nonzero: usize,
}

impl Audit {
    /// `values` restricted to `support` must sum to one, everything else must
    /// be exactly zero. A row with no support must be all zeros.
    fn check(&mut self, values: &[f64], support: &[bool]) {
        self.masked_nonzero += values.iter().zip(support).filter(|(v, s)| !**s && **v != 0.0).count();
        if support.iter().any(|s| *s) {
            self.distributions += 1;
            let sum: f64 = values.iter().sum();
            self.max_sum_error = self.max_sum_error.max((sum - 1.0).abs());
        }
    }
}

/// Runs the graph attention of `count` random scenes (0 to 6 objects and
/// tokens, padded questions, all four relation settings in turn) and checks
/// every token attention, triplet, neighborhood attention, node attention
/// and fused weight vector.
pub fn normalization_audit(count: usize, seed: u64) -> Result<NormalizationAudit> {
    let base = ModelConfig { max_objects: 6, max_texts: 6, k: 3, max_decode_steps: 4, ..gradcheck_config() };
    let relation_sets = [
        RelationSet::ALL,
        RelationSet::NONE,
        RelationSet { oo: true, ot: false, tt: false, to: true },
        RelationSet { oo: false, ot: true, tt: true, to: false },
    ];
    let qv = Vocabulary::question(&template_vocabulary());
    let av = Vocabulary::answer(&["yes", "no"]);
    let models: Vec<Model> = relation_sets
        .iter()
        .enumerate()
        .map(|(i, r)| Model::new(ModelConfig { relations: *r, ..base.clone() }, qv.clone(), av.clone(), seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = Audit::default();
    for i in 0..count {
        let n_obj = rng.random_range(0..=6);
        let n_text = rng.random_range(if n_obj == 0 { 1 } else { 0 }..=6);
        let model = &models[i % models.len()];
        let inst = random_instance(seed.wrapping_mul(7919).wrapping_add(i as u64), n_obj, n_text);
        let enc = model.encode_instance(&inst)?;
        let mut tape = Tape::new();
        let bp = model.params.bind_frozen(&mut tape);
        let scene = model.forward_scene(&mut tape, &bp, &enc)?;
        let q = &scene.question;
        for a in q.attention {
            audit.check(tape.value(a).data(), enc.tokens.valid());
        }
        for t in [q.obj_triplet, q.text_triplet] {
            audit.check(tape.value(t).data(), &[true; 3]);
        }
        for e in scene.edges.iter().flatten() {
            let qd = tape.value(e.q).data();
            for (row, chunk) in qd.chunks(e.kmax.max(1)).enumerate() {
                let slots: Vec<bool> = e.slots[row * e.kmax..(row + 1) * e.kmax].iter().map(Option::is_some).collect();
                audit.check(chunk, &slots);
            }
            audit.check(tape.value(e.p).data(), &e.support);
        }
        for (branch, roles) in [(&scene.obj, [EdgeRole::ObjObj, EdgeRole::ObjText]), (&scene.text, [EdgeRole::TextText, EdgeRole::TextObj])] {
            if let Some(p) = branch.p_node {
                let n = tape.value(p).cols();
                audit.check(tape.value(p).data(), &alloc::vec![true; n]);
            }
            if let Some(t) = branch.triplet {
                let enabled = [true, scene.edges[roles[0].index()].is_some(), scene.edges[roles[1].index()].is_some()];
                audit.check(tape.value(t).data(), &enabled);
            }
            if let Some(a) = branch.alpha {
                let n = tape.value(a).cols();
                audit.check(tape.value(a).data(), &alloc::vec![true; n]);
            }
        }
    }
    Ok(NormalizationAudit {
        instances: count,
        distributions: audit.distributions,
        max_sum_error: audit.max_sum_error,
        masked_nonzero: audit.masked_nonzero,
    })
}
