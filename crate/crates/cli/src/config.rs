//! The TOML run configuration. Command-line flags override its values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use reltag::datasets::SynthConfig;
use reltag::encoder::EncoderConfig;
use reltag::evaluation::MatchMode;
use reltag::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Existing vocabulary file; built from the training corpus when absent.
    pub vocab: Option<PathBuf>,
    /// Model directory written by `train` and read by `extract`.
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, shuffling, dropout and generation.
    pub seed: Option<u64>,
    /// Tag threshold for extraction and validation.
    pub threshold: Option<f64>,
    pub mode: MatchMode,
    pub paths: Paths,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(self.train.threshold)
    }

    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed
            .context("a seed is required (`--seed` or `seed` in the config)")
    }
}

/// The path, or an error naming the flag and config key that supply it.
pub fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    path.as_deref().with_context(|| format!("missing {what}"))
}

pub fn existing<'a>(path: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    let p = required(path, what)?;
    if !p.exists() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(p)
}
