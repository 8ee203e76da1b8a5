//! Answer and OCR evaluation metrics.
//!
//! All string comparisons go through [`normalize_answer`]: lowercase, trim,
//! collapse internal whitespace.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::BoundingBox;

pub fn normalize_answer(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalRecord {
    pub question_id: String,
    pub prediction: String,
    pub answers: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub accuracy: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub anls: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub ocr_ub: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub precision: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub recall: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub hmean: Option<f64>,
}

/// `min(#ground truths equal to the prediction / 3, 1)`.
pub fn vqa_accuracy(record: &EvalRecord) -> f64 {
    let pred = normalize_answer(&record.prediction);
    let hits = record.answers.iter().filter(|a| normalize_answer(a) == pred).count();
    (hits as f64 / 3.0).min(1.0)
}

pub fn mean_vqa_accuracy(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(vqa_accuracy).sum::<f64>() / records.len() as f64
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized Levenshtein distance; `0` for two empty strings.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / len as f64
}

/// Best similarity of the prediction against any ground truth; a match is
/// rejected once its normalized distance reaches `tau` (exact matches are
/// always accepted).
pub fn anls_score(record: &EvalRecord, tau: f64) -> f64 {
    let pred = normalize_answer(&record.prediction);
    record
        .answers
        .iter()
        .map(|g| {
            let nl = normalized_levenshtein(&pred, &normalize_answer(g));
            if nl == 0.0 || nl < tau {
                1.0 - nl
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

pub fn anls(records: &[EvalRecord], tau: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| anls_score(r, tau)).sum::<f64>() / records.len() as f64
}

/// True when every word of `answer` equals some OCR token (tokens reusable,
/// order ignored).
pub fn answer_achievable(answer: &str, ocr_tokens: &[String]) -> bool {
    let toks: Vec<String> = ocr_tokens.iter().map(|t| normalize_answer(t)).collect();
    let norm = normalize_answer(answer);
    !norm.is_empty() && norm.split(' ').all(|w| toks.iter().any(|t| t == w))
}

/// Accuracy an oracle could reach by assembling answers from the OCR tokens
/// of each instance: the best VQA accuracy over achievable ground truths,
/// averaged over instances.
pub fn ocr_upper_bound(items: &[(EvalRecord, Vec<String>)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let total: f64 = items
        .iter()
        .map(|(rec, toks)| {
            rec.answers
                .iter()
                .filter(|a| answer_achievable(a, toks))
                .map(|a| vqa_accuracy(&EvalRecord { prediction: a.clone(), ..rec.clone() }))
                .fold(0.0, f64::max)
        })
        .sum();
    total / items.len() as f64
}

/// Intersection over union; `0` when the union has no area.
pub fn box_overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_br.min(b.x_br) - a.x_tl.max(b.x_tl)).max(0.0);
    let ih = (a.y_br.min(b.y_br) - a.y_tl.max(b.y_tl)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OcrDetection {
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
    pub token: String,
}

pub fn hmean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Greedy one-to-one matching in descending overlap order. A pair matches
/// when the overlap exceeds `thresh` and the tokens agree ignoring case.
/// Returns `(precision, recall, hmean)`; empty lists score 0.
pub fn ocr_detection_eval(preds: &[OcrDetection], gts: &[OcrDetection], thresh: f64) -> (f64, f64, f64) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let ov = box_overlap(&p.bbox, &g.bbox);
            if ov > thresh && normalize_answer(&p.token) == normalize_answer(&g.token) {
                pairs.push((ov, i, j));
            }
        }
    }
    // Overlap descending; ties resolved on box and token content so the
    // result does not depend on list order.
    let key = |d: &OcrDetection| (normalize_answer(&d.token), [d.bbox.x_tl, d.bbox.y_tl, d.bbox.x_br, d.bbox.y_br]);
    let cmp_key = |a: &OcrDetection, b: &OcrDetection| {
        let (ta, ba) = key(a);
        let (tb, bb) = key(b);
        ta.cmp(&tb).then_with(|| ba.iter().zip(&bb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal))
    };
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| cmp_key(&preds[a.1], &preds[b.1]))
            .then_with(|| cmp_key(&gts[a.2], &gts[b.2]))
    });
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut matches = 0usize;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            matches += 1;
        }
    }
    let p = if preds.is_empty() { 0.0 } else { matches as f64 / preds.len() as f64 };
    let r = if gts.is_empty() { 0.0 } else { matches as f64 / gts.len() as f64 };
    (p, r, hmean(p, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use approx::assert_abs_diff_eq;

    fn rec(pred: &str, answers: &[&str]) -> EvalRecord {
        EvalRecord {
            question_id: "q".into(),
            prediction: pred.into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn vqa_accuracy_values() {
        let three = rec("yes", &["yes", "yes", "Yes", "no", "no", "no", "no", "no", "no", "no"]);
        assert_eq!(vqa_accuracy(&three), 1.0);
        let one = rec("stop", &["stop", "go", "go", "go", "go", "go", "go", "go", "go", "go"]);
        assert_abs_diff_eq!(vqa_accuracy(&one), 1.0 / 3.0);
        assert_eq!(vqa_accuracy(&rec("x", &["y"; 10])), 0.0);
    }

    #[test]
    fn levenshtein_values() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn anls_values() {
        assert_eq!(anls(&[rec("hello", &["hello"])], 0.5), 1.0);
        assert_abs_diff_eq!(anls(&[rec("helo", &["hello"])], 0.5), 0.8, epsilon = 1e-12);
        assert_eq!(anls(&[rec("dog", &["cat"])], 0.5), 0.0);
        assert_eq!(anls(&[rec("", &[""])], 0.5), 1.0);
    }

    #[test]
    fn anls_zero_tau_is_exact_match() {
        let rs = [rec("helo", &["hello"]), rec("Hello", &["hello"])];
        assert_eq!(anls(&rs, 0.0), 0.5);
    }

    #[test]
    fn achievability() {
        let toks: Vec<String> = ["stop", "sign", "go"].iter().map(|s| s.to_string()).collect();
        assert!(answer_achievable("stop sign", &toks));
        assert!(answer_achievable("Stop", &toks));
        assert!(!answer_achievable("stop", &[]));
        assert!(!answer_achievable("yield", &toks));
    }

    #[test]
    fn ocr_ub_scores_best_achievable_answer() {
        let r = rec("", &["stop", "stop", "stop", "halt"]);
        let items = [(r.clone(), vec!["stop".to_string()]), (r, vec!["halt".to_string()])];
        assert_abs_diff_eq!(ocr_upper_bound(&items), (1.0 + 1.0 / 3.0) / 2.0);
    }

    #[test]
    fn overlap_values() {
        let a = bx(0.0, 0.0, 2.0, 1.0);
        assert_eq!(box_overlap(&a, &a), 1.0);
        assert_eq!(box_overlap(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_abs_diff_eq!(box_overlap(&a, &bx(1.0, 0.0, 3.0, 1.0)), 1.0 / 3.0);
        assert_eq!(box_overlap(&bx(1.0, 1.0, 1.0, 1.0), &bx(1.0, 1.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn detection_values() {
        let d = |x: f64, t: &str| OcrDetection { bbox: bx(x, 0.0, x + 1.0, 1.0), token: t.into() };
        let gts = [d(0.0, "a"), d(2.0, "b"), d(4.0, "c"), d(6.0, "d")];
        assert_eq!(ocr_detection_eval(&gts, &gts, 0.5), (1.0, 1.0, 1.0));
        let preds = [d(0.0, "A"), d(2.0, "x")];
        let (p, r, h) = ocr_detection_eval(&preds, &gts, 0.5);
        assert_eq!((p, r), (0.5, 0.25));
        assert_abs_diff_eq!(h, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(ocr_detection_eval(&[], &gts, 0.5), (0.0, 0.0, 0.0));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  Stop   SIGN "), "stop sign");
    }
}
