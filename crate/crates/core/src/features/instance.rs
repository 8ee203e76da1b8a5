use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::embed::pseudo_text_embedding;
use super::phoc::{phoc, PHOC_DIM};
use crate::error::{Error, Result};
use crate::graph::{normalize_box, BoundingBox};
use crate::numerics::Tensor;

pub const WORD_VEC_DIM: usize = 300;
pub const APPEARANCE_DIM: usize = 2048;
pub const RECOG_DIM: usize = 512;
pub const BOX_DIM: usize = 4;

pub const MAX_OBJECTS: usize = 36;
pub const MAX_TEXTS: usize = 50;
pub const MAX_QUESTION_LEN: usize = 20;
pub const MAX_ANSWERS: usize = 10;

const WORD_VEC_SEED: u64 = 0x5eed_0001;
const TEXT_APPEARANCE_SEED: u64 = 0x5eed_0002;
const RECOG_SEED: u64 = 0x5eed_0003;
const OBJECT_APPEARANCE_SEED: u64 = 0x5eed_0004;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectRegion {
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub label: Option<String>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub appearance: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OcrToken {
    pub token: String,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub word_vec: Option<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub appearance: Option<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub phoc: Option<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub recog: Option<Vec<f64>>,
}

impl OcrToken {
    pub fn new(token: impl Into<String>, bbox: BoundingBox) -> Self {
        Self { token: token.into(), bbox, word_vec: None, appearance: None, phoc: None, recog: None }
    }
}

/// One question about one image.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Instance {
    pub id: String,
    #[cfg_attr(feature = "serde", serde(rename = "W"))]
    pub width: f64,
    #[cfg_attr(feature = "serde", serde(rename = "H"))]
    pub height: f64,
    pub question: Vec<String>,
    pub objects: Vec<ObjectRegion>,
    pub texts: Vec<OcrToken>,
    pub answers: Vec<String>,
}

fn check_width(what: &str, v: &Option<Vec<f64>>, width: usize) -> Result<()> {
    match v {
        Some(v) if v.len() != width => Err(Error::Instance(format!("{what} has width {}, expected {width}", v.len()))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => Err(Error::Instance(format!("{what} has non-finite values"))),
        _ => Ok(()),
    }
}

impl Instance {
    /// Checks feature widths, node caps (36 objects, 50 OCR tokens, 20
    /// question tokens, 1 to 10 answers) and box sanity.
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::Instance(format!("image size {}x{} must be positive", self.width, self.height)));
        }
        if self.question.is_empty() || self.question.len() > MAX_QUESTION_LEN {
            return Err(Error::Instance(format!(
                "question has {} tokens; allowed 1..={MAX_QUESTION_LEN}",
                self.question.len()
            )));
        }
        if self.objects.len() > MAX_OBJECTS {
            return Err(Error::Instance(format!(
                "{} object regions exceeds the cap of {MAX_OBJECTS}",
                self.objects.len()
            )));
        }
        if self.texts.len() > MAX_TEXTS {
            return Err(Error::Instance(format!("{} OCR tokens exceeds the cap of {MAX_TEXTS}", self.texts.len())));
        }
        if self.objects.is_empty() && self.texts.is_empty() {
            return Err(Error::Instance("instance has no object or text nodes".into()));
        }
        if self.answers.is_empty() || self.answers.len() > MAX_ANSWERS {
            return Err(Error::Instance(format!(
                "{} ground-truth answers; allowed 1..={MAX_ANSWERS}",
                self.answers.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.bbox.validate()?;
            if o.bbox.is_degenerate() {
                return Err(Error::Instance(format!("object {i}: degenerate source box")));
            }
            check_width(&format!("object {i} appearance"), &o.appearance, APPEARANCE_DIM)?;
        }
        for (i, t) in self.texts.iter().enumerate() {
            t.bbox.validate()?;
            if t.bbox.is_degenerate() {
                return Err(Error::Instance(format!("text {i}: degenerate source box")));
            }
            if t.token.is_empty() {
                return Err(Error::Instance(format!("text {i}: empty token")));
            }
            check_width(&format!("text {i} word_vec"), &t.word_vec, WORD_VEC_DIM)?;
            check_width(&format!("text {i} appearance"), &t.appearance, APPEARANCE_DIM)?;
            check_width(&format!("text {i} phoc"), &t.phoc, PHOC_DIM)?;
            check_width(&format!("text {i} recog"), &t.recog, RECOG_DIM)?;
            if let Some(p) = &t.phoc {
                if p.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Instance(format!("text {i}: phoc entries must be 0 or 1")));
                }
            }
        }
        Ok(())
    }

    pub fn object_boxes(&self) -> Vec<BoundingBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn text_boxes(&self) -> Vec<BoundingBox> {
        self.texts.iter().map(|t| t.bbox).collect()
    }

    pub fn tokens(&self) -> Vec<String> {
        self.texts.iter().map(|t| t.token.clone()).collect()
    }
}

/// Complete features of one object node.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectNodeFeatures {
    pub appearance: Vec<f64>,
    pub bbox: BoundingBox,
}

/// Complete features of one text node.
#[derive(Clone, Debug, PartialEq)]
pub struct TextNodeFeatures {
    pub word_vec: Vec<f64>,
    pub appearance: Vec<f64>,
    pub phoc: Vec<f64>,
    pub recog: Vec<f64>,
    pub bbox: BoundingBox,
    pub token: String,
}

impl ObjectNodeFeatures {
    /// Uses stored features when present, otherwise synthesizes them.
    pub fn resolve(o: &ObjectRegion) -> Self {
        let appearance = o.appearance.clone().unwrap_or_else(|| {
            let key = o.label.as_deref().unwrap_or("");
            pseudo_text_embedding(key, APPEARANCE_DIM, OBJECT_APPEARANCE_SEED)
        });
        Self { appearance, bbox: o.bbox }
    }
}

impl TextNodeFeatures {
    pub fn resolve(t: &OcrToken) -> Self {
        Self {
            word_vec: t.word_vec.clone().unwrap_or_else(|| pseudo_text_embedding(&t.token, WORD_VEC_DIM, WORD_VEC_SEED)),
            appearance: t
                .appearance
                .clone()
                .unwrap_or_else(|| pseudo_text_embedding(&t.token, APPEARANCE_DIM, TEXT_APPEARANCE_SEED)),
            phoc: t.phoc.clone().unwrap_or_else(|| phoc(&t.token)),
            recog: t.recog.clone().unwrap_or_else(|| pseudo_text_embedding(&t.token, RECOG_DIM, RECOG_SEED)),
            bbox: t.bbox,
            token: t.token.clone(),
        }
    }
}

/// Stacked node feature matrices for one instance, shared with every tape that reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    pub obj_appearance: Arc<Tensor>,
    pub obj_box: Arc<Tensor>,
    pub text_word_vec: Arc<Tensor>,
    pub text_appearance: Arc<Tensor>,
    pub text_phoc: Arc<Tensor>,
    pub text_recog: Arc<Tensor>,
    pub text_box: Arc<Tensor>,
}

fn stack(rows: Vec<Vec<f64>>, width: usize) -> Arc<Tensor> {
    let n = rows.len();
    Arc::new(Tensor::from_vec(n, width, rows.concat()).expect("rows have uniform width"))
}

pub fn featurize(inst: &Instance) -> NodeFeatures {
    let objs: Vec<ObjectNodeFeatures> = inst.objects.iter().map(ObjectNodeFeatures::resolve).collect();
    let texts: Vec<TextNodeFeatures> = inst.texts.iter().map(TextNodeFeatures::resolve).collect();
    let nb = |b: &BoundingBox| normalize_box(b, inst.width, inst.height).to_vec();
    NodeFeatures {
        obj_appearance: stack(objs.iter().map(|o| o.appearance.clone()).collect(), APPEARANCE_DIM),
        obj_box: stack(objs.iter().map(|o| nb(&o.bbox)).collect(), BOX_DIM),
        text_word_vec: stack(texts.iter().map(|t| t.word_vec.clone()).collect(), WORD_VEC_DIM),
        text_appearance: stack(texts.iter().map(|t| t.appearance.clone()).collect(), APPEARANCE_DIM),
        text_phoc: stack(texts.iter().map(|t| t.phoc.clone()).collect(), PHOC_DIM),
        text_recog: stack(texts.iter().map(|t| t.recog.clone()).collect(), RECOG_DIM),
        text_box: stack(texts.iter().map(|t| nb(&t.bbox)).collect(), BOX_DIM),
    }
}
