//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "RGCKPT\0\x01"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (see `Header`)
//! payload      f64 values of every entry, in header order, row-major
//! digest       32 bytes  SHA-256 of everything above
//! ```
//!
//! Entries are the parameters in canonical order, then `adam.m/<name>` and
//! `adam.v/<name>` for each parameter. The content hash of a checkpoint is
//! the hex form of the trailing digest.

use std::path::Path;

use anyhow::{bail, ensure, Context};
use relgraph_core::config::ModelConfig;
use relgraph_core::model::Model;
use relgraph_core::numerics::{AdamState, ParamSet, Tensor};
use relgraph_core::train::{TrainConfig, Trainer};
use relgraph_core::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"RGCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub question_vocab: Vec<String>,
    pub answer_vocab: Vec<String>,
    pub step: u64,
    pub adam_t: u64,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub adam: AdamState,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self { model: t.model.clone(), train: t.config.clone(), adam: t.adam.clone(), step: t.step }
    }

    pub fn into_trainer(self) -> anyhow::Result<Trainer> {
        Ok(Trainer::resume(self.model, self.train, self.adam, self.step)?)
    }

    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let params = &self.model.params;
        let mut entries = Vec::with_capacity(3 * params.len());
        let mut tensors: Vec<&Tensor> = Vec::with_capacity(3 * params.len());
        for (prefix, list) in [("", None), (ADAM_M, Some(&self.adam.m)), (ADAM_V, Some(&self.adam.v))] {
            for (i, (name, t)) in params.iter().enumerate() {
                let t = match list {
                    Some(l) => l.get(i).context("optimizer state is shorter than the parameter set")?,
                    None => t,
                };
                entries.push(Entry { name: format!("{prefix}{name}"), shape: t.shape(), dtype: "f64".into() });
                tensors.push(t);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.model.config.clone(),
            train: self.train.clone(),
            question_vocab: self.model.question_vocab.words().to_vec(),
            answer_vocab: self.model.answer_vocab.words().to_vec(),
            step: self.step,
            adam_t: self.adam.t,
            entries,
        };
        let json = serde_json::to_vec(&header)?;
        let payload_len: usize = tensors.iter().map(|t| t.len() * 8).sum();
        let mut out = Vec::with_capacity(8 + 8 + json.len() + payload_len + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> anyhow::Result<Self> {
        ensure!(bytes.len() >= 8 + 8 + 32, "checkpoint is truncated");
        ensure!(&bytes[..8] == MAGIC, "not a checkpoint (bad magic)");
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        ensure!(Sha256::digest(body).as_slice() == digest, "checkpoint digest mismatch (file is corrupt)");
        let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize.checked_add(header_len).filter(|&e| e <= body.len()).context("checkpoint header overruns the file")?;
        let header: Header = serde_json::from_slice(&body[16..header_end]).context("bad checkpoint header")?;
        ensure!(header.format_version == FORMAT_VERSION, "unsupported checkpoint format version {}", header.format_version);
        ensure!(header.entries.len() % 3 == 0, "checkpoint entry count {} is not a multiple of 3", header.entries.len());

        let mut payload = &body[header_end..];
        let mut tensors = Vec::with_capacity(header.entries.len());
        for e in &header.entries {
            ensure!(e.dtype == "f64", "entry {}: unsupported dtype {}", e.name, e.dtype);
            let n = e.shape[0].checked_mul(e.shape[1]).context("entry shape overflows")?;
            let nbytes = n.checked_mul(8).filter(|&b| b <= payload.len()).with_context(|| format!("entry {} overruns the payload", e.name))?;
            let (raw, rest) = payload.split_at(nbytes);
            let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(Tensor::from_vec(e.shape[0], e.shape[1], data)?);
            payload = rest;
        }
        ensure!(payload.is_empty(), "{} trailing payload bytes", payload.len());

        let n = header.entries.len() / 3;
        let mut params = ParamSet::new();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, t) in tensors.into_iter().enumerate() {
            let name = &header.entries[i].name;
            let base = &header.entries[i % n].name;
            match i / n {
                0 => {
                    params.insert(name.clone(), t)?;
                }
                section => {
                    let (prefix, list) = if section == 1 { (ADAM_M, &mut m) } else { (ADAM_V, &mut v) };
                    if name.strip_prefix(prefix) != Some(base.as_str()) || t.shape() != header.entries[i % n].shape {
                        bail!("optimizer entry {name} does not match parameter {base}");
                    }
                    list.push(t);
                }
            }
        }
        let qv = Vocabulary::question_from_lines(&header.question_vocab)?;
        let av = Vocabulary::answer_from_lines(&header.answer_vocab)?;
        let model = Model::from_params(header.model, qv, av, params)?;
        let adam = AdamState { config: header.train.adam, m, v, t: header.adam_t };
        header.train.validate()?;
        Ok(Self { model, train: header.train, adam, step: header.step })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
    }
}

/// Hex SHA-256 digest stored at the end of serialized checkpoint bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(&bytes[bytes.len().saturating_sub(32)..])
}
