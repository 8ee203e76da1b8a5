//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use relgraph_core::config::ModelConfig;
use relgraph_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "RELGRAPH_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabPaths {
    pub question: Option<PathBuf>,
    pub answer: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: VocabPaths,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::default(),
            Preset::Full => Self { model: ModelConfig::full(), train: TrainConfig::full(), vocab: VocabPaths::default() },
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Parses TOML; relative vocab paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        if let Some(base) = base {
            for p in [&mut cfg.vocab.question, &mut cfg.vocab.answer].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, path.parent()).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `--config`, then the environment variable, then the desk preset.
    pub fn resolve(flag: Option<&Path>) -> anyhow::Result<Self> {
        if let Some(p) = flag {
            return Self::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

pub fn parse_metric_list(s: &str) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for m in s.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if !["accuracy", "anls", "ocr_ub"].contains(&m) {
            bail!("unknown metric `{m}` (expected accuracy, anls or ocr_ub)");
        }
        if !out.iter().any(|x| x == m) {
            out.push(m.to_string());
        }
    }
    if out.is_empty() {
        bail!("no metrics requested");
    }
    Ok(out)
}
