//! Independent re-implementations used as test oracles. Each `*_gap`
//! function returns the largest absolute deviation between the crate and
//! its oracle; each `*_mismatches` function counts disagreements.
//!
//! Shared by this crate's integration tests and the acceptance target.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relgraph_core::attention::{self, edge_attention, embed_object_nodes, embed_text_nodes, node_attention, TextInputs};
use relgraph_core::config::ModelConfig;
use relgraph_core::features::phoc::{bigrams, phoc, ALPHABET_LEN, PHOC_DIM, UNIGRAM_LEVELS};
use relgraph_core::features::{APPEARANCE_DIM, BOX_DIM, RECOG_DIM, WORD_VEC_DIM};
use relgraph_core::graph::{build_graph, edge_feature, BoundingBox, Edge, EdgeRole, EdgeSet, NodeRole};
use relgraph_core::metrics::levenshtein;
use relgraph_core::nn::Init;
use relgraph_core::numerics::{ParamSet, Tape, Tensor};
use relgraph_core::qencoder::{self, decompose_question, embed_question, QuestionRole, QuestionTokens};

// ---------------------------------------------------------------- graph

/// The edge formula written out term by term.
pub fn feature_oracle(s: &BoundingBox, t: &BoundingBox) -> [f64; 5] {
    let w = s.x_br - s.x_tl;
    let h = s.y_br - s.y_tl;
    let cx = 0.5 * (s.x_tl + s.x_br);
    let cy = 0.5 * (s.y_tl + s.y_br);
    let wj = t.x_br - t.x_tl;
    let hj = t.y_br - t.y_tl;
    [(t.x_tl - cx) / w, (t.y_tl - cy) / h, (t.x_br - cx) / w, (t.y_br - cy) / h, (wj * hj) / (w * h)]
}

/// O(n²) neighbor selection: repeatedly take the closest unused candidate,
/// lowest index first among equals.
pub fn neighbors_oracle(src: &BoundingBox, cands: &[BoundingBox], k: usize, skip: Option<usize>) -> Vec<usize> {
    let center = |b: &BoundingBox| (0.5 * (b.x_tl + b.x_br), 0.5 * (b.y_tl + b.y_br));
    let (sx, sy) = center(src);
    let dist = |j: usize| {
        let (x, y) = center(&cands[j]);
        ((x - sx).powi(2) + (y - sy).powi(2)).sqrt()
    };
    let mut used = vec![false; cands.len()];
    if let Some(s) = skip {
        used[s] = true;
    }
    let mut out = Vec::new();
    while out.len() < k {
        let mut best: Option<usize> = None;
        for j in 0..cands.len() {
            if !used[j] && best.is_none_or(|b| dist(j) < dist(b)) {
                best = Some(j);
            }
        }
        match best {
            Some(b) => {
                used[b] = true;
                out.push(b);
            }
            None => break,
        }
    }
    out
}

pub fn random_boxes(rng: &mut ChaCha8Rng, n: usize, grid: bool) -> Vec<BoundingBox> {
    (0..n)
        .map(|_| {
            // grid placement produces exact distance ties
            let (x, y) = if grid {
                (rng.random_range(0..8) as f64 * 10.0, rng.random_range(0..8) as f64 * 10.0)
            } else {
                (rng.random_range(0.0..400.0), rng.random_range(0.0..300.0))
            };
            let (w, h) = if grid { (4.0, 4.0) } else { (rng.random_range(1.0..80.0), rng.random_range(1.0..60.0)) };
            BoundingBox::new(x, y, x + w, y + h).unwrap()
        })
        .collect()
}

/// Largest deviation of `edge_feature` from the formula over random box pairs.
pub fn edge_feature_gap(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap: f64 = 0.0;
    for _ in 0..pairs {
        let b = random_boxes(&mut rng, 2, false);
        let got = edge_feature(&b[0], &b[1]).unwrap().0;
        for (x, y) in got.iter().zip(feature_oracle(&b[0], &b[1])) {
            gap = gap.max((x - y).abs());
        }
    }
    gap
}

/// `(edge list mismatches, largest feature deviation)` of `build_graph`
/// against the brute-force neighbor search on random scenes with up to 20
/// objects and 20 tokens.
pub fn build_graph_check(scenes: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mismatches, mut gap) = (0usize, 0.0f64);
    for case in 0..scenes {
        let n = rng.random_range(0..=20);
        let m = rng.random_range(if n == 0 { 1 } else { 0 }..=20);
        let k = rng.random_range(1..=6);
        let grid = case % 3 == 0;
        let objs = random_boxes(&mut rng, n, grid);
        let texts = random_boxes(&mut rng, m, grid);
        let tokens: Vec<String> = (0..m).map(|i| format!("t{i}")).collect();
        let g = build_graph(&objs, &texts, &tokens, k, 400.0, 300.0).unwrap();
        for role in EdgeRole::ALL {
            let pick = |r: NodeRole| if r == NodeRole::Object { &objs } else { &texts };
            let (src, tgt) = (pick(role.source()), pick(role.target()));
            let same = role.source() == role.target();
            let mut want = Vec::new();
            for (i, s) in src.iter().enumerate() {
                for j in neighbors_oracle(s, tgt, k, same.then_some(i)) {
                    want.push((i, j, feature_oracle(s, &tgt[j])));
                }
            }
            let got = &g.edge_set(role).edges;
            if got.len() != want.len() {
                mismatches += 1;
                continue;
            }
            for (e, (i, j, f)) in got.iter().zip(&want) {
                if (e.source, e.target) != (*i, *j) {
                    mismatches += 1;
                }
                for (a, b) in e.feature.0.iter().zip(f) {
                    gap = gap.max((a - b).abs());
                }
            }
        }
    }
    (mismatches, gap)
}

// ---------------------------------------------------------------- strings

/// Plain recursion over the three edit choices; exponential, fine for six characters.
pub fn lev_oracle(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = lev_oracle(ra, rb) + usize::from(x != y);
            sub.min(lev_oracle(ra, b) + 1).min(lev_oracle(a, rb) + 1)
        }
    }
}

pub fn random_word(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| ['a', 'b', 'c'][rng.random_range(0..3)]).collect()
}

/// Disagreements with the recursive oracle on random pairs of at most six characters.
pub fn levenshtein_mismatches(pairs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .filter(|_| {
            let (a, b) = (random_word(&mut rng, 6), random_word(&mut rng, 6));
            levenshtein(&a, &b) != lev_oracle(a.as_bytes(), b.as_bytes())
        })
        .count()
}

/// Exact fraction with a positive denominator.
#[derive(Clone, Copy, Debug)]
struct Q(i64, i64);

impl Q {
    fn lt(self, o: Q) -> bool {
        self.0 * o.1 < o.0 * self.1
    }
    fn min(self, o: Q) -> Q {
        if self.lt(o) { self } else { o }
    }
    fn max(self, o: Q) -> Q {
        if self.lt(o) { o } else { self }
    }
    fn sub(self, o: Q) -> Q {
        Q(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
}

/// Overlap of `[a0, a1)` with `[b0, b1)` is at least half of `[a0, a1)`.
fn half_covered(a0: Q, a1: Q, b0: Q, b1: Q) -> bool {
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    let ov = if lo.lt(hi) { hi.sub(lo) } else { Q(0, 1) };
    !(Q(2 * ov.0, ov.1).lt(a1.sub(a0)))
}

fn sym(c: u8) -> usize {
    match c {
        b'a'..=b'z' => (c - b'a') as usize,
        _ => 26 + (c - b'0') as usize,
    }
}

/// Histogram built bit by bit from exact interval overlaps.
pub fn phoc_oracle(word: &str) -> Vec<f64> {
    let w: Vec<u8> = word.bytes().filter(u8::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect();
    let n = w.len() as i64;
    let mut out = Vec::with_capacity(PHOC_DIM);
    for &l in &UNIGRAM_LEVELS {
        let l = l as i64;
        for r in 0..l {
            for s in 0..ALPHABET_LEN {
                let hit = (0..n).any(|i| sym(w[i as usize]) == s && half_covered(Q(i, n), Q(i + 1, n), Q(r, l), Q(r + 1, l)));
                out.push(if hit { 1.0 } else { 0.0 });
            }
        }
    }
    let table = bigrams();
    for r in 0..2 {
        for b in &table {
            let hit = (0..n - 1).any(|i| {
                w[i as usize..i as usize + 2] == b[..] && half_covered(Q(i, n), Q(i + 2, n), Q(r, 2), Q(r + 1, 2))
            });
            out.push(if hit { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Every word over `alphabet` of length at most `max_len`, the empty word included.
pub fn words(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut all = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        frontier = frontier.iter().flat_map(|w| alphabet.iter().map(move |c| format!("{w}{c}"))).collect();
        all.extend(frontier.iter().cloned());
    }
    all
}

/// Disagreements on all words of at most four characters over `{a, b, 1}`.
pub fn phoc_mismatches() -> usize {
    words(&['a', 'b', '1'], 4).iter().filter(|w| phoc(w) != phoc_oracle(w)).count()
}

// ---------------------------------------------------------------- attention

fn vecmat(v: &[f64], w: &Tensor) -> Vec<f64> {
    assert_eq!(v.len(), w.rows());
    (0..w.cols()).map(|j| (0..w.rows()).map(|i| v[i] * w.get(i, j)).sum()).collect()
}

fn affine(ps: &ParamSet, name: &str, v: &[f64]) -> Vec<f64> {
    let mut y = vecmat(v, ps.get(&format!("{name}.w")).unwrap());
    if let Ok(b) = ps.get(&format!("{name}.b")) {
        y.iter_mut().zip(b.data()).for_each(|(a, b)| *a += b);
    }
    y
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn softmax_ref(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn ln_ref(ps: &ParamSet, name: &str, v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let g = ps.get(&format!("{name}.g")).unwrap().data();
    let b = ps.get(&format!("{name}.b")).unwrap().data();
    v.iter().enumerate().map(|(i, x)| g[i] * (x - mean) / (var + eps).sqrt() + b[i]).collect()
}

/// `wᵀ[ReLU(W_s s) ∘ ReLU(W_x x)]`.
fn guided_ref(ps: &ParamSet, prefix: &str, x: &[f64], s: &[f64]) -> f64 {
    let hs = relu(affine(ps, &format!("{prefix}.ws"), s));
    let hx = relu(affine(ps, &format!("{prefix}.wx"), x));
    let z: Vec<f64> = hs.iter().zip(&hx).map(|(a, b)| a * b).collect();
    affine(ps, &format!("{prefix}.w"), &z)[0]
}

fn gap_of(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Replaces every parameter with random values so biases, gains and
/// offsets all take part.
fn randomize(ps: &mut ParamSet, seed: u64) {
    let mut init = Init::new(seed);
    for id in 0..ps.len() {
        let t = ps.tensor_mut(id);
        let scale = 1.0 / (t.rows() as f64).sqrt();
        *t = init.normal(t.rows(), t.cols(), scale.max(0.3));
    }
}

const D: usize = 6;
const EPS: f64 = 1e-5;

/// Token attention, guiding vectors and triplets of the question
/// decomposition against a direct evaluation over a padded question.
pub fn question_decomposition_gap(seed: u64) -> f64 {
    let cfg = ModelConfig { d: D, heads: 2, ffn_width: 8, question_encoder: false, max_question_len: 6, ..ModelConfig::desk() };
    let mut ps = ParamSet::new();
    qencoder::init_params(&mut Init::new(seed), &mut ps, &cfg, 12).unwrap();
    randomize(&mut ps, seed ^ 0x51);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..3).map(|_| rng.random_range(0..12)).collect();
    let toks = QuestionTokens::new(&ids, cfg.max_question_len).unwrap();
    let mut tape = Tape::new();
    let bp = ps.bind_frozen(&mut tape);
    let x = embed_question(&mut tape, &bp, &toks, &cfg).unwrap();
    let got = decompose_question(&mut tape, &bp, x, toks.valid()).unwrap().values(&tape);

    let table = ps.get("qenc.embed").unwrap();
    let rows: Vec<&[f64]> = ids.iter().map(|&i| table.row_slice(i)).collect();
    let mut gap: f64 = 0.0;
    for role in QuestionRole::ALL {
        let name = format!("qenc.role.{}", role.tag());
        let logits: Vec<f64> = rows.iter().map(|r| affine(&ps, &format!("{name}.out"), &relu(affine(&ps, &format!("{name}.h"), r)))[0]).collect();
        let a = softmax_ref(&logits);
        let mut padded = a.clone();
        padded.resize(cfg.max_question_len, 0.0);
        let s: Vec<f64> = (0..D).map(|k| (0..3).map(|t| a[t] * rows[t][k]).sum()).collect();
        gap = gap.max(gap_of(&got.attention[role.index()], &padded));
        gap = gap.max(gap_of(&got.guide[role.index()], &s));
    }
    let mean: Vec<f64> = (0..D).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / 3.0).collect();
    gap = gap.max(gap_of(&got.obj_triplet, &softmax_ref(&affine(&ps, "qenc.triplet.obj", &mean))));
    gap.max(gap_of(&got.text_triplet, &softmax_ref(&affine(&ps, "qenc.triplet.text", &mean))))
}

fn attention_params(seed: u64) -> ParamSet {
    let mut ps = ParamSet::new();
    attention::init_params(&mut Init::new(seed), &mut ps, D).unwrap();
    randomize(&mut ps, seed ^ 0xa7);
    ps
}

/// Object node embedding, `LN(W_fr x_fr) + LN(W_b x_box)`.
pub fn object_embedding_gap(seed: u64) -> f64 {
    let ps = attention_params(seed);
    let mut init = Init::new(seed + 1);
    let app = init.normal(2, APPEARANCE_DIM, 1.0);
    let bx = init.normal(2, BOX_DIM, 1.0);
    let mut tape = Tape::new();
    let bp = ps.bind_frozen(&mut tape);
    let (a, b) = (tape.constant(app.clone()), tape.constant(bx.clone()));
    let x = embed_object_nodes(&mut tape, &bp, a, b, EPS).unwrap();
    (0..2)
        .map(|r| {
            let fa = ln_ref(&ps, "node.obj.ln_fr", &affine(&ps, "node.obj.fr", app.row_slice(r)), EPS);
            let fb = ln_ref(&ps, "node.obj.ln_box", &affine(&ps, "node.obj.box", bx.row_slice(r)), EPS);
            let want: Vec<f64> = fa.iter().zip(&fb).map(|(a, b)| a + b).collect();
            gap_of(tape.value(x).row_slice(r), &want)
        })
        .fold(0.0, f64::max)
}

/// Text node embedding, `LN(W_ft x_ft + W_fr x_fr + W_p x_p + W_rec x_rec) + LN(W_b x_box)`.
pub fn text_embedding_gap(seed: u64) -> f64 {
    let ps = attention_params(seed);
    let mut init = Init::new(seed + 2);
    let widths = [WORD_VEC_DIM, APPEARANCE_DIM, PHOC_DIM, RECOG_DIM, BOX_DIM];
    let f: Vec<Tensor> = widths.iter().map(|&w| init.normal(2, w, 1.0)).collect();
    let mut tape = Tape::new();
    let bp = ps.bind_frozen(&mut tape);
    let inputs = TextInputs {
        word_vec: tape.constant(f[0].clone()),
        appearance: tape.constant(f[1].clone()),
        phoc: tape.constant(f[2].clone()),
        recog: tape.constant(f[3].clone()),
        boxes: tape.constant(f[4].clone()),
    };
    let x = embed_text_nodes(&mut tape, &bp, inputs, EPS).unwrap();
    (0..2)
        .map(|r| {
            let mut sum = vec![0.0; D];
            for (t, name) in f.iter().zip(["ft", "fr", "p", "rec"]) {
                let y = affine(&ps, &format!("node.text.{name}"), t.row_slice(r));
                sum.iter_mut().zip(y).for_each(|(a, b)| *a += b);
            }
            let a = ln_ref(&ps, "node.text.ln_feat", &sum, EPS);
            let b = ln_ref(&ps, "node.text.ln_box", &affine(&ps, "node.text.box", f[4].row_slice(r)), EPS);
            let want: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + b).collect();
            gap_of(tape.value(x).row_slice(r), &want)
        })
        .fold(0.0, f64::max)
}

/// Question-guided node attention over four nodes, for both node roles.
pub fn node_attention_gap(seed: u64) -> f64 {
    let ps = attention_params(seed);
    let mut init = Init::new(seed + 3);
    let x = init.normal(4, D, 1.0);
    let s = init.normal(1, D, 1.0);
    let mut gap: f64 = 0.0;
    for role in ["o", "t"] {
        let mut tape = Tape::new();
        let bp = ps.bind_frozen(&mut tape);
        let (xv, sv) = (tape.constant(x.clone()), tape.constant(s.clone()));
        let p = node_attention(&mut tape, &bp, role, xv, sv).unwrap();
        let logits: Vec<f64> = (0..4).map(|i| guided_ref(&ps, &format!("attn.{role}"), x.row_slice(i), s.data())).collect();
        gap = gap.max(gap_of(tape.value(p).data(), &softmax_ref(&logits)));
    }
    gap
}

/// Edge attention on a toy graph whose `edges` are `(source, target)`
/// pairs over `boxes`, checked end to end: edge representations,
/// neighborhood attention, attended features and node attention. Nodes
/// without edges must get exact zeros.
fn edge_toy_gap(seed: u64, role: EdgeRole, boxes: &[BoundingBox], pairs: &[(usize, usize)]) -> f64 {
    let ps = attention_params(seed);
    let edges = EdgeSet {
        edges: pairs.iter().map(|&(i, j)| Edge { source: i, target: j, feature: edge_feature(&boxes[i], &boxes[j]).unwrap() }).collect(),
    };
    let n = boxes.len();
    let mut init = Init::new(seed + 4);
    let x = init.normal(n, D, 1.0);
    let s = init.normal(1, D, 1.0);
    let mut tape = Tape::new();
    let bp = ps.bind_frozen(&mut tape);
    let (xv, sv) = (tape.constant(x.clone()), tape.constant(s.clone()));
    let out = edge_attention(&mut tape, &bp, role, &edges, xv, sv).unwrap();

    let pre = format!("attn.{}", role.tag());
    let reps: Vec<Vec<f64>> = edges
        .edges
        .iter()
        .map(|e| {
            let mut inp = e.feature.0.to_vec();
            inp.extend_from_slice(x.row_slice(e.source));
            affine(&ps, &format!("{pre}.mlp2"), &relu(affine(&ps, &format!("{pre}.mlp1"), &inp)))
        })
        .collect();
    let mut q = vec![0.0; pairs.len()];
    let mut x_tilde = vec![vec![0.0; D]; n];
    let mut node_logits = Vec::new();
    let mut with_edges = Vec::new();
    for i in 0..n {
        let hood: Vec<usize> = (0..pairs.len()).filter(|&e| pairs[e].0 == i).collect();
        if hood.is_empty() {
            continue;
        }
        let lg: Vec<f64> = hood.iter().map(|&e| guided_ref(&ps, &format!("{pre}.edge"), &reps[e], s.data())).collect();
        let qi = softmax_ref(&lg);
        for (slot, &e) in hood.iter().enumerate() {
            q[e] = qi[slot];
            for k in 0..D {
                x_tilde[i][k] += qi[slot] * reps[e][k];
            }
        }
        node_logits.push(guided_ref(&ps, &format!("{pre}.node"), &x_tilde[i], s.data()));
        with_edges.push(i);
    }
    let mut p = vec![0.0; n];
    for (i, v) in with_edges.iter().zip(softmax_ref(&node_logits)) {
        p[*i] = v;
    }

    let mut gap = gap_of(&out.edge_weights(&tape), &q);
    for (e, r) in reps.iter().enumerate() {
        gap = gap.max(gap_of(tape.value(out.edge_repr).row_slice(e), r));
    }
    for (i, want) in x_tilde.iter().enumerate() {
        let got = tape.value(out.x_tilde).row_slice(i);
        if !with_edges.contains(&i) && got.iter().any(|v| *v != 0.0) {
            return f64::INFINITY;
        }
        gap = gap.max(gap_of(got, want));
    }
    let got_p = tape.value(out.p).data();
    if (0..n).any(|i| !with_edges.contains(&i) && got_p[i] != 0.0) {
        return f64::INFINITY;
    }
    gap.max(gap_of(got_p, &p))
}

/// Two toy graphs: two nodes joined by two edges out of node 0 (node 1 has
/// none), and three nodes with neighborhoods of size two, zero and one.
pub fn edge_attention_gap(seed: u64) -> f64 {
    let bx = |a: f64, b: f64, c: f64, d: f64| BoundingBox::new(a, b, c, d).unwrap();
    let two = [bx(0.0, 0.0, 2.0, 2.0), bx(3.0, 1.0, 5.0, 4.0)];
    let three = [two[0], two[1], bx(1.0, 5.0, 2.0, 6.0)];
    let a = edge_toy_gap(seed, EdgeRole::ObjObj, &two, &[(0, 1), (0, 0)]);
    let b = edge_toy_gap(seed + 1, EdgeRole::TextObj, &three, &[(0, 1), (0, 2), (2, 0)]);
    a.max(b)
}
