//! Flat `key = value` training configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DEFAULT_MAX_LEN;
use crate::gat::MaskModeName;
use crate::model::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {detail}")]
    Line { line: usize, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without a new best training loss before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Worker threads for per-sentence gradients; 1 runs sequentially and
    /// 0 uses every core. Results do not depend on this value.
    pub threads: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            batch_size: 24,
            lr: 1e-3,
            epochs: 30,
            seed: 0,
            patience: 5,
            clip_norm: None,
            threads: 1,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("bad value {value:?}: {e}"))
}

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| ConfigError::Line { line: n + 1, detail };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        match key {
            "max_len" => self.max_len = parse(value)?,
            "batch_size" => self.batch_size = parse(value)?,
            "lr" => self.lr = parse(value)?,
            "epochs" => self.epochs = parse(value)?,
            "seed" => self.seed = parse(value)?,
            "patience" => self.patience = parse(value)?,
            "threads" => self.threads = parse(value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" | "off" => None,
                    v => Some(parse(v)?),
                }
            }
            "embed.dim" | "embedding.dim" => m.embed_dim = parse(value)?,
            "bilstm.hidden" => m.bilstm_hidden = parse(value)?,
            "fuse.dim" => m.fuse_dim = parse(value)?,
            "variant" => m.variant = parse(value)?,
            "mask_mode" => {
                let mode: MaskModeName = parse(value)?;
                m.tgat.mask_mode = mode;
                m.cgat.mask_mode = mode;
            }
            _ => {
                let (layer, field) = key.split_once('.').ok_or_else(|| format!("unknown key {key:?}"))?;
                let gat = match layer {
                    "tgat" => &mut m.tgat,
                    "cgat" => &mut m.cgat,
                    _ => return Err(format!("unknown key {key:?}")),
                };
                match field {
                    "dim" => gat.dim = parse(value)?,
                    "heads" => gat.heads = parse(value)?,
                    "dropout" => gat.dropout = parse(value)?,
                    "leaky_slope" => gat.leaky_slope = parse(value)?,
                    "mask_mode" => gat.mask_mode = parse(value)?,
                    _ => return Err(format!("unknown key {key:?}")),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: &str| Err(ConfigError::Invalid(s.into()));
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if matches!(self.clip_norm, Some(c) if !(c.is_finite() && c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.max_len, c.batch_size, c.lr), (50, 24, 1e-3));
        assert_eq!((c.model.embed_dim, c.model.bilstm_hidden, c.model.fuse_dim), (300, 150, 300));
        assert_eq!((c.model.tgat.dim, c.model.tgat.heads), (100, 3));
        assert_eq!((c.model.tgat.dropout, c.model.tgat.leaky_slope), (0.15, 0.008));
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = TrainConfig::parse_str(
            "# run\nepochs = 4\nseed=9\n\nvariant = context-only\ntgat.mask_mode = literal\ncgat.heads = 2\nclip_norm = 5\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 4);
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.variant, Variant::ContextOnly);
        assert_eq!(c.model.tgat.mask_mode, MaskModeName::Literal);
        assert_eq!(c.model.cgat.mask_mode, MaskModeName::Renormalize);
        assert_eq!(c.model.cgat.heads, 2);
        assert_eq!(c.clip_norm, Some(5.0));
    }

    #[test]
    fn rejects_bad_input() {
        let line = |e| matches!(e, ConfigError::Line { line: 2, .. });
        assert!(line(TrainConfig::parse_str("epochs = 1\nwhat = 3").unwrap_err()));
        assert!(line(TrainConfig::parse_str("epochs = 1\nlr = fast").unwrap_err()));
        assert!(line(TrainConfig::parse_str("epochs = 1\nno equals").unwrap_err()));
        assert!(matches!(
            TrainConfig::parse_str("batch_size = 0").unwrap_err(),
            ConfigError::Invalid(_)
        ));
        assert!(TrainConfig::parse_str("tgat.dropout = 1.5").is_err());
    }
}
