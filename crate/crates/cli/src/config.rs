//! Run configuration: an optional TOML file merged under command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use ckprobe_core::scorer::ENDPOINT_ENV;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Local,
    Remote,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML file with default settings; flags take precedence
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub scorer: Option<ScorerKind>,
    /// Model server base URL [env: CKPROBE_ENDPOINT]
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    /// relation<TAB>pattern lines; built-in templates when absent
    #[arg(long, global = true, value_name = "PATH")]
    pub templates: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated cutoffs, e.g. 1,5,10,100
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub ks: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub sim_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub bin_width: Option<f64>,
}

/// Keys accepted in the config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scorer: Option<ScorerKind>,
    pub endpoint: Option<String>,
    pub vocab: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ks: Option<Vec<usize>>,
    pub sim_threshold: Option<f64>,
    pub bin_width: Option<f64>,
    pub kb: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub smoothing: Option<f64>,
    pub min_weight: Option<f64>,
    pub results: Option<PathBuf>,
    pub squad: Option<PathBuf>,
    pub predictions: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flags and file settings after merging. Relative paths in the config file
/// resolve against the file's directory.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub global: GlobalArgs,
    pub file: FileConfig,
    base: Option<PathBuf>,
}

impl Settings {
    pub fn new(global: GlobalArgs) -> Result<Self> {
        let (file, base) = match &global.config {
            Some(path) => {
                require_file(path, "--config")?;
                (FileConfig::load(path)?, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        Ok(Settings { global, file, base })
    }

    fn from_file(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_ref().map(|p| match &self.base {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.clone(),
        })
    }

    /// A path from the flag, else the config file.
    pub fn path(&self, flag: &Option<PathBuf>, file: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.from_file(file))
    }

    pub fn vocab(&self) -> Result<PathBuf> {
        let p = self
            .path(&self.global.vocab, &self.file.vocab)
            .context("a vocabulary is required (--vocab)")?;
        require_file(&p, "--vocab")?;
        Ok(p)
    }

    pub fn templates(&self) -> Result<Option<PathBuf>> {
        let p = self.path(&self.global.templates, &self.file.templates);
        if let Some(p) = &p {
            require_file(p, "--templates")?;
        }
        Ok(p)
    }

    pub fn out(&self) -> Result<PathBuf> {
        let out = self
            .path(&self.global.out, &self.file.out)
            .context("an output directory is required (--out)")?;
        if out.exists() && !out.is_dir() {
            bail!("--out {} exists and is not a directory", out.display());
        }
        Ok(out)
    }

    pub fn seed(&self) -> u64 {
        self.global.seed.or(self.file.seed).unwrap_or(0)
    }

    pub fn ks(&self, default: &[usize]) -> Result<Vec<usize>> {
        let ks = self
            .global
            .ks
            .clone()
            .or_else(|| self.file.ks.clone())
            .unwrap_or_else(|| default.to_vec());
        if ks.is_empty() || ks.contains(&0) {
            bail!("--ks must list positive cutoffs, got {ks:?}");
        }
        Ok(ks)
    }

    pub fn scorer(&self) -> ScorerKind {
        self.global.scorer.or(self.file.scorer).unwrap_or(ScorerKind::Local)
    }

    /// Flag, then config file, then the environment.
    pub fn endpoint(&self) -> Option<String> {
        self.global
            .endpoint
            .clone()
            .or_else(|| self.file.endpoint.clone())
            .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
    }

    pub fn sim_threshold(&self, default: f64) -> Result<f64> {
        let t = self.global.sim_threshold.or(self.file.sim_threshold).unwrap_or(default);
        if !(0.0..=1.0).contains(&t) {
            bail!("--sim-threshold must be in [0, 1], got {t}");
        }
        Ok(t)
    }

    pub fn bin_width(&self, default: f64) -> Result<f64> {
        let w = self.global.bin_width.or(self.file.bin_width).unwrap_or(default);
        if !(w > 0.0 && w <= 1.0) {
            bail!("--bin-width must be in (0, 1], got {w}");
        }
        Ok(w)
    }
}

pub fn require_file(path: &Path, flag: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{flag}: no such file {}", path.display());
    }
    Ok(())
}
