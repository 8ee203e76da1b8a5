//! Synthetic scenes whose answer is fixed by one planted spatial relation.
//!
//! Every scene is drawn by rejection sampling until the relation picks out
//! exactly one OCR token, so the stored answer can always be re-derived
//! from the boxes alone.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::instance::{Instance, ObjectRegion, OcrToken};
use crate::error::{Error, Result};
use crate::graph::BoundingBox;

/// Token that tags the reference text of [`RelationRule::TextNearestMarkedText`].
pub const MARKER_TOKEN: &str = "mark";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RelationRule {
    /// The answer is the only text lying inside the largest object.
    TextInLargestObject,
    /// The answer is the text whose center is nearest the marker text.
    TextNearestMarkedText,
    /// The answer is the only text to the right of the single object, level
    /// with it.
    ObjectLeftOfText,
}

impl RelationRule {
    pub const ALL: [RelationRule; 3] =
        [RelationRule::TextInLargestObject, RelationRule::TextNearestMarkedText, RelationRule::ObjectLeftOfText];

    pub fn id(self) -> &'static str {
        match self {
            RelationRule::TextInLargestObject => "to",
            RelationRule::TextNearestMarkedText => "tt",
            RelationRule::ObjectLeftOfText => "ot",
        }
    }

    /// Fixed question template naming the rule.
    pub fn question(self) -> &'static [&'static str] {
        match self {
            RelationRule::TextInLargestObject => &["which", "word", "is", "inside", "the", "largest", "object"],
            RelationRule::TextNearestMarkedText => &["which", "word", "is", "nearest", "to", "the", "marked", "word"],
            RelationRule::ObjectLeftOfText => &["which", "word", "has", "the", "object", "on", "its", "left"],
        }
    }
}

impl fmt::Display for RelationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for RelationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationRule::ALL
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown relation rule `{s}` (expected to, tt or ot)")))
    }
}

/// Every word used by the question templates, in a fixed order.
pub fn template_vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    for rule in RelationRule::ALL {
        for w in rule.question() {
            if !words.contains(w) {
                words.push(w);
            }
        }
    }
    words
}

struct Canvas {
    w: f64,
    h: f64,
}

impl Canvas {
    /// Random box with extents drawn as fractions of the image.
    fn random_box(&self, rng: &mut ChaCha8Rng, fw: (f64, f64), fh: (f64, f64)) -> BoundingBox {
        let bw = rng.random_range(fw.0..fw.1) * self.w;
        let bh = rng.random_range(fh.0..fh.1) * self.h;
        let x = rng.random_range(0.0..(self.w - bw));
        let y = rng.random_range(0.0..(self.h - bh));
        BoundingBox { x_tl: x, y_tl: y, x_br: x + bw, y_br: y + bh }
    }

    fn text_box(&self, rng: &mut ChaCha8Rng) -> BoundingBox {
        self.random_box(rng, (0.05, 0.12), (0.03, 0.07))
    }
}

fn random_token(rng: &mut ChaCha8Rng, taken: &[String]) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    loop {
        let len = rng.random_range(3..=6);
        let tok: String = (0..len).map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char).collect();
        if tok != MARKER_TOKEN && !taken.contains(&tok) {
            return tok;
        }
    }
}

fn tokens_for(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = random_token(rng, &out);
        out.push(t);
    }
    out
}

fn center_dist2(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx) * (ax - bx) + (ay - by) * (ay - by)
}

fn right_of_and_level(obj: &BoundingBox, text: &BoundingBox) -> bool {
    let (_, cy) = text.center();
    text.x_tl >= obj.x_br && cy >= obj.y_tl && cy <= obj.y_br
}

/// Returns `(objects, texts, answer_index)`; the answer text is `texts[answer_index]`.
type Layout = (Vec<BoundingBox>, Vec<BoundingBox>, usize);

fn layout_in_largest(rng: &mut ChaCha8Rng, c: &Canvas) -> Layout {
    loop {
        let n_obj = rng.random_range(2..=4);
        let n_text = rng.random_range(3..=6);
        let big = c.random_box(rng, (0.35, 0.55), (0.35, 0.55));
        let mut objects = vec![big];
        for _ in 1..n_obj {
            objects.push(c.random_box(rng, (0.1, 0.3), (0.1, 0.3)));
        }
        let bw = rng.random_range(0.25..0.6) * big.width();
        let bh = rng.random_range(0.1..0.25) * big.height();
        let x = rng.random_range(big.x_tl..(big.x_br - bw));
        let y = rng.random_range(big.y_tl..(big.y_br - bh));
        let mut texts = vec![BoundingBox { x_tl: x, y_tl: y, x_br: x + bw, y_br: y + bh }];
        for i in 1..n_text {
            // Half of the distractors sit inside a smaller object.
            let t = if i % 2 == 1 {
                let host = objects[rng.random_range(1..n_obj)];
                let tw = rng.random_range(0.3..0.8) * host.width();
                let th = rng.random_range(0.1..0.4) * host.height();
                let tx = rng.random_range(host.x_tl..(host.x_br - tw));
                let ty = rng.random_range(host.y_tl..(host.y_br - th));
                BoundingBox { x_tl: tx, y_tl: ty, x_br: tx + tw, y_br: ty + th }
            } else {
                c.text_box(rng)
            };
            texts.push(t);
        }
        let largest_unique = objects[1..].iter().all(|o| o.area() < 0.8 * big.area());
        let inside = texts.iter().filter(|t| big.contains(t)).count();
        if largest_unique && inside == 1 {
            return (objects, texts, 0);
        }
    }
}

fn layout_nearest_marked(rng: &mut ChaCha8Rng, c: &Canvas) -> Layout {
    loop {
        let n_obj = rng.random_range(1..=3);
        let n_text = rng.random_range(4..=7);
        let objects: Vec<BoundingBox> = (0..n_obj).map(|_| c.random_box(rng, (0.1, 0.4), (0.1, 0.4))).collect();
        let texts: Vec<BoundingBox> = (0..n_text).map(|_| c.text_box(rng)).collect();
        // texts[0] is the marker
        let mut d: Vec<(f64, usize)> = (1..n_text).map(|j| (center_dist2(&texts[0], &texts[j]), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        if d[1].0 >= 1.25 * 1.25 * d[0].0 && d[0].0 > 0.0 {
            return (objects, texts, d[0].1);
        }
    }
}

fn layout_left_of(rng: &mut ChaCha8Rng, c: &Canvas) -> Layout {
    loop {
        let n_text = rng.random_range(3..=6);
        let ow = rng.random_range(0.15..0.35) * c.w;
        let oh = rng.random_range(0.15..0.35) * c.h;
        let ox = rng.random_range(0.0..(0.7 * c.w - ow));
        let oy = rng.random_range(0.0..(c.h - oh));
        let obj = BoundingBox { x_tl: ox, y_tl: oy, x_br: ox + ow, y_br: oy + oh };
        let tw = rng.random_range(0.05..0.12) * c.w;
        let th = rng.random_range(0.03..0.07) * c.h;
        let tx = obj.x_br + rng.random_range(0.0..0.1) * c.w;
        let cy = rng.random_range(obj.y_tl..obj.y_br);
        let ty = (cy - th / 2.0).clamp(0.0, c.h - th);
        let answer = BoundingBox { x_tl: tx, y_tl: ty, x_br: (tx + tw).min(c.w), y_br: ty + th };
        let mut texts = vec![answer];
        for _ in 1..n_text {
            texts.push(c.text_box(rng));
        }
        let hits = texts.iter().filter(|t| right_of_and_level(&obj, t)).count();
        if hits == 1 && right_of_and_level(&obj, &answer) && !answer.is_degenerate() {
            return (vec![obj], texts, 0);
        }
    }
}

/// Scene for `rule`, fully determined by `seed`.
pub fn generate_synthetic_scene(rule: RelationRule, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_5a3c_0000_0000);
    let canvas = Canvas { w: rng.random_range(320.0..640.0_f64).round(), h: rng.random_range(240.0..480.0_f64).round() };
    let (objects, texts, answer_idx) = match rule {
        RelationRule::TextInLargestObject => layout_in_largest(&mut rng, &canvas),
        RelationRule::TextNearestMarkedText => layout_nearest_marked(&mut rng, &canvas),
        RelationRule::ObjectLeftOfText => layout_left_of(&mut rng, &canvas),
    };
    let mut tokens = tokens_for(&mut rng, texts.len());
    if rule == RelationRule::TextNearestMarkedText {
        tokens[0] = MARKER_TOKEN.to_string();
    }
    let answer = tokens[answer_idx].clone();

    let mut ocr: Vec<OcrToken> = texts.iter().zip(&tokens).map(|(b, t)| OcrToken::new(t.clone(), *b)).collect();
    ocr.shuffle(&mut rng);
    let mut objs: Vec<ObjectRegion> =
        objects.iter().map(|b| ObjectRegion { bbox: *b, label: Some("object".into()), appearance: None }).collect();
    objs.shuffle(&mut rng);

    Instance {
        id: format!("{}-{seed}", rule.id()),
        width: canvas.w,
        height: canvas.h,
        question: rule.question().iter().map(|w| w.to_string()).collect(),
        objects: objs,
        texts: ocr,
        answers: vec![answer; 10],
    }
}

/// `count` scenes with per-instance seeds derived from `seed`.
pub fn generate_dataset(rule: RelationRule, count: usize, seed: u64) -> Vec<Instance> {
    (0..count as u64)
        .map(|i| generate_synthetic_scene(rule, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}
