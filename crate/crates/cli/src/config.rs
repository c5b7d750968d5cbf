//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lexfuse::align::AlignConfig;
use lexfuse::model::{ModelConfig, Variant};
use lexfuse::train::TrainConfig;

pub const CONFIG_ENV: &str = "LEXFUSE_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    pub test_src: Option<PathBuf>,
    pub test_tgt: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub variant: Variant,
    pub lexbar: u64,
    pub min_count: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub threshold: f64,
    pub soft_copy: bool,
    pub dropout: f64,
    pub seed: u64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub max_len: usize,
    pub dev_fraction: f64,
    pub beam: usize,
    pub align_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            train_src: None,
            train_tgt: None,
            dev_src: None,
            dev_tgt: None,
            test_src: None,
            test_tgt: None,
            dict: None,
            variant: m.variant,
            lexbar: 1,
            min_count: 2,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            layers: m.layers,
            threshold: m.threshold,
            soft_copy: m.soft_copy,
            dropout: m.dropout,
            seed: m.seed,
            patience: t.patience,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            clip_norm: t.clip_norm,
            max_len: t.max_len,
            dev_fraction: 0.05,
            beam: 1,
            align_iterations: AlignConfig::default().iterations,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("bad value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "train_src",
        "train_tgt",
        "dev_src",
        "dev_tgt",
        "test_src",
        "test_tgt",
        "dict",
        "variant",
        "lexbar",
        "min_count",
        "embed_dim",
        "hidden_dim",
        "layers",
        "threshold",
        "soft_copy",
        "dropout",
        "seed",
        "patience",
        "max_epochs",
        "batch_size",
        "lr",
        "clip_norm",
        "max_len",
        "dev_fraction",
        "beam",
        "align_iterations",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_src" => self.train_src = Some(value.into()),
            "train_tgt" => self.train_tgt = Some(value.into()),
            "dev_src" => self.dev_src = Some(value.into()),
            "dev_tgt" => self.dev_tgt = Some(value.into()),
            "test_src" => self.test_src = Some(value.into()),
            "test_tgt" => self.test_tgt = Some(value.into()),
            "dict" => self.dict = Some(value.into()),
            "variant" => self.variant = parse(key, value)?,
            "lexbar" => self.lexbar = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "soft_copy" => self.soft_copy = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "dev_fraction" => self.dev_fraction = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "align_iterations" => self.align_iterations = parse(key, value)?,
            _ => bail!("unknown config key `{key}` (known: {})", Self::KEYS.join(", ")),
        }
        Ok(())
    }

    /// Apply every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`", n + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    /// Config from `explicit`, else from the path in the environment, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    /// Lines that [`RunConfig::apply_text`] reads back to the same config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let values: Vec<(&str, Option<String>)> = vec![
            ("train_src", path(&self.train_src)),
            ("train_tgt", path(&self.train_tgt)),
            ("dev_src", path(&self.dev_src)),
            ("dev_tgt", path(&self.dev_tgt)),
            ("test_src", path(&self.test_src)),
            ("test_tgt", path(&self.test_tgt)),
            ("dict", path(&self.dict)),
            ("variant", Some(self.variant.to_string())),
            ("lexbar", Some(self.lexbar.to_string())),
            ("min_count", Some(self.min_count.to_string())),
            ("embed_dim", Some(self.embed_dim.to_string())),
            ("hidden_dim", Some(self.hidden_dim.to_string())),
            ("layers", Some(self.layers.to_string())),
            ("threshold", Some(self.threshold.to_string())),
            ("soft_copy", Some(self.soft_copy.to_string())),
            ("dropout", Some(self.dropout.to_string())),
            ("seed", Some(self.seed.to_string())),
            ("patience", Some(self.patience.to_string())),
            ("max_epochs", Some(self.max_epochs.to_string())),
            ("batch_size", Some(self.batch_size.to_string())),
            ("lr", Some(self.lr.to_string())),
            ("clip_norm", Some(self.clip_norm.to_string())),
            ("max_len", Some(self.max_len.to_string())),
            ("dev_fraction", Some(self.dev_fraction.to_string())),
            ("beam", Some(self.beam.to_string())),
            ("align_iterations", Some(self.align_iterations.to_string())),
        ];
        values
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            variant: self.variant,
            threshold: self.threshold,
            soft_copy: self.soft_copy,
            dropout: self.dropout,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            patience: self.patience,
            seed: self.seed,
            max_len: self.max_len,
            ..TrainConfig::default()
        };
        t.adam.lr = self.lr;
        t
    }

    /// Check everything a training run needs before it starts.
    pub fn validate_for_training(&self) -> Result<()> {
        for (name, p) in [("train_src", &self.train_src), ("train_tgt", &self.train_tgt)] {
            match p {
                None => bail!("`{name}` is required"),
                Some(p) if !p.is_file() => bail!("`{name}` file {} does not exist", p.display()),
                _ => {}
            }
        }
        if self.dev_src.is_some() != self.dev_tgt.is_some() {
            bail!("`dev_src` and `dev_tgt` must be given together");
        }
        for (name, p) in [("dev_src", &self.dev_src), ("dev_tgt", &self.dev_tgt), ("dict", &self.dict)] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!("`{name}` file {} does not exist", p.display());
                }
            }
        }
        if self.variant.is_lex_fused() && self.dict.is_none() {
            bail!("variant {} needs a dictionary (`dict`)", self.variant);
        }
        if self.lexbar < 1 || self.min_count < 1 {
            bail!("`lexbar` and `min_count` must be at least 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            bail!("`batch_size` and `max_epochs` must be positive");
        }
        if !(self.lr > 0.0) {
            bail!("`lr` must be positive");
        }
        self.model_config().validate()?;
        Ok(())
    }
}
