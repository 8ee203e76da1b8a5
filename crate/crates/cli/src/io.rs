//! Instance files, vocabulary files, loss logs and atomic output.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use relgraph_core::features::Instance;
use relgraph_core::metrics::normalize_answer;
use relgraph_core::train::LossRecord;
use relgraph_core::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

pub const INSTANCE_FORMAT: &str = "relgraph-instances";
pub const INSTANCE_VERSION: u32 = 1;

/// First line of an instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceHeader {
    pub format: String,
    pub version: u32,
    pub count: usize,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// failed command never leaves a half-written output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().with_context(|| format!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    res.with_context(|| format!("writing {}", path.display()))
}

pub fn instances_to_string(data: &[Instance]) -> anyhow::Result<String> {
    let header = InstanceHeader { format: INSTANCE_FORMAT.into(), version: INSTANCE_VERSION, count: data.len() };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for inst in data {
        out.push_str(&serde_json::to_string(inst)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses and validates an instance file. Ids must be unique.
pub fn parse_instances(text: &str) -> anyhow::Result<Vec<Instance>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().context("instance file is empty (missing header line)")?;
    let header: InstanceHeader = serde_json::from_str(first).context("line 1: bad header")?;
    if header.format != INSTANCE_FORMAT || header.version != INSTANCE_VERSION {
        bail!("line 1: expected format {INSTANCE_FORMAT} version {INSTANCE_VERSION}, found {} version {}", header.format, header.version);
    }
    let mut out: Vec<Instance> = Vec::with_capacity(header.count);
    let mut ids = std::collections::HashSet::new();
    for (i, line) in lines {
        let inst: Instance = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        inst.validate().with_context(|| format!("line {}", i + 1))?;
        if !ids.insert(inst.id.clone()) {
            bail!("line {}: duplicate instance id `{}`", i + 1, inst.id);
        }
        out.push(inst);
    }
    if out.len() != header.count {
        bail!("header announces {} instances, file holds {}", header.count, out.len());
    }
    Ok(out)
}

pub fn read_instances(path: &Path) -> anyhow::Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instances(&text).with_context(|| format!("in {}", path.display()))
}

pub fn vocab_to_string(v: &Vocabulary) -> String {
    let mut s = v.words().join("\n");
    s.push('\n');
    s
}

pub fn read_vocab(path: &Path, answer: bool) -> anyhow::Result<Vocabulary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading vocabulary {}", path.display()))?;
    let lines = text.lines().filter(|l| !l.trim().is_empty());
    let v = if answer { Vocabulary::answer_from_lines(lines) } else { Vocabulary::question_from_lines(lines) };
    v.with_context(|| format!("in {}", path.display()))
}

/// Question words in order of first appearance.
pub fn derive_question_vocab(data: &[Instance]) -> Vocabulary {
    let words: Vec<&str> = data.iter().flat_map(|i| i.question.iter().map(String::as_str)).collect();
    Vocabulary::question(&words)
}

/// Answer words that cannot be copied from the instance's own OCR tokens,
/// in order of first appearance.
pub fn derive_answer_vocab(data: &[Instance]) -> Vocabulary {
    let mut words: Vec<String> = Vec::new();
    for inst in data {
        let toks: Vec<String> = inst.texts.iter().map(|t| normalize_answer(&t.token)).collect();
        for a in &inst.answers {
            for w in normalize_answer(a).split(' ').filter(|w| !w.is_empty()) {
                if !toks.iter().any(|t| t == w) {
                    words.push(w.to_string());
                }
            }
        }
    }
    Vocabulary::answer(&words)
}

pub fn loss_log_to_string(log: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    s
}
