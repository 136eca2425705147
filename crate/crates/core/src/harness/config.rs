use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::OnError;
use crate::attack::AttackConfig;
use crate::error::{ensure, Error, Result};

/// A codec under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecEntry {
    pub checkpoint: PathBuf,
    /// Short name used in reports and artifact paths.
    pub label: String,
}

/// The experimental grid: every image × codec × ε × IC variant.
///
/// Relative paths are taken relative to [`ExperimentConfig::base_dir`], which
/// is the config file's directory when loaded with [`ExperimentConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub codecs: Vec<CodecEntry>,
    /// Budgets on the 0–255 scale.
    pub epsilons: Vec<f64>,
    /// `true` runs with the imperceptibility term, `false` without.
    #[serde(default = "default_ic_variants")]
    pub ic_variants: Vec<bool>,
    /// Template for every cell; `epsilon`, `ic_enabled` and `seed` are
    /// replaced per cell.
    #[serde(default)]
    pub attack: AttackConfig,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub on_error: OnError,
    /// Use only the first `n` images in name order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_images: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_ic_variants() -> Vec<bool> {
    vec![true]
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `p` joined onto the base directory unless it is absolute.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.codecs.is_empty(), "at least one codec is required");
        ensure!(!self.epsilons.is_empty(), "at least one epsilon is required");
        ensure!(!self.ic_variants.is_empty(), "at least one IC variant is required");
        ensure!(self.workers > 0, "workers must be at least 1");
        for (i, &e) in self.epsilons.iter().enumerate() {
            ensure!(e.is_finite() && e >= 0.0, "epsilon {e} must be non-negative");
            ensure!(!self.epsilons[..i].contains(&e), "epsilon {e} listed twice");
        }
        for (i, v) in self.ic_variants.iter().enumerate() {
            ensure!(!self.ic_variants[..i].contains(v), "IC variant {v} listed twice");
        }
        for (i, c) in self.codecs.iter().enumerate() {
            ensure!(
                !c.label.is_empty()
                    && c.label
                        .chars()
                        .all(|ch| ch.is_ascii_alphanumeric() || "._-".contains(ch)),
                "codec label '{}' must be non-empty and use only [A-Za-z0-9._-]",
                c.label
            );
            ensure!(
                self.codecs[..i].iter().all(|o| o.label != c.label),
                "codec label '{}' listed twice",
                c.label
            );
            let ckpt = self.resolve(&c.checkpoint);
            ensure!(ckpt.is_file(), "checkpoint {} does not exist", ckpt.display());
        }
        let data = self.resolve(&self.dataset);
        ensure!(data.is_dir(), "dataset directory {} does not exist", data.display());
        ensure!(self.max_images != Some(0), "max_images must be positive");
        self.attack.validate()
    }
}
