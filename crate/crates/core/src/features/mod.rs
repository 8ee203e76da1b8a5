//! Node features, the instance schema, and the synthetic scene generator.

pub mod embed;
pub mod instance;
pub mod phoc;
pub mod synth;

pub use embed::pseudo_text_embedding;
pub use instance::{
    featurize, Instance, NodeFeatures, ObjectNodeFeatures, ObjectRegion, OcrToken, TextNodeFeatures, APPEARANCE_DIM,
    BOX_DIM, MAX_ANSWERS, MAX_OBJECTS, MAX_QUESTION_LEN, MAX_TEXTS, RECOG_DIM, WORD_VEC_DIM,
};
pub use phoc::{phoc, PHOC_DIM};
pub use synth::{generate_dataset, generate_synthetic_scene, template_vocabulary, RelationRule, MARKER_TOKEN};
