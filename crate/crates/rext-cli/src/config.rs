//! Flat `key=value` run configuration with `#` comments. Command-line
//! flags override file values, which override the built-in defaults;
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rext_core::model::{HeadKind, ModelConfig};
use rext_core::preprocess::SplitterConfig;
use rext_core::train::TrainConfig;

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "max_len",
    "min_frequency",
    "hidden",
    "layers",
    "attention_heads",
    "ff_dim",
    "max_positions",
    "head_dim",
    "cnn_filters_per_size",
    "cnn_window_sizes",
    "dropout",
    "cls_path",
    "head",
    "learning_rate",
    "epochs",
    "batch_size",
    "adam_epsilon",
    "adam_beta1",
    "adam_beta2",
    "gradient_accumulation_steps",
    "max_grad_norm",
    "weight_decay",
    "warmup_steps",
    "non_terminal_tokens",
    "abbreviations",
];

/// Parsed settings; every field optional so that later sources can override
/// earlier ones.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Settings::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Settings> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("config line {}: expected key=value, got {:?}", i + 1, raw);
            };
            let key = k.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("config line {}: unknown key {:?}", i + 1, key);
            }
            map.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Settings { map })
    }

    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(KNOWN_KEYS.contains(&key), "unknown settings key {key}");
        self.map.insert(key.to_string(), value);
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => {
                v.parse().map(Some).map_err(|_| anyhow::anyhow!("bad value {v:?} for key {key}"))
            }
        }
    }

    fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.map.get(key).map(|v| {
            v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
        })
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.get("seed")
    }

    pub fn max_len(&self) -> Result<usize> {
        Ok(self.get("max_len")?.unwrap_or(512))
    }

    pub fn min_frequency(&self) -> Result<usize> {
        Ok(self.get("min_frequency")?.unwrap_or(1))
    }

    pub fn splitter_config(&self) -> Result<SplitterConfig> {
        let mut cfg = SplitterConfig::default();
        if let Some(tokens) = self.get_list("non_terminal_tokens") {
            cfg.non_terminal_tokens = tokens;
        }
        if let Some(tokens) = self.get_list("abbreviations") {
            cfg.abbreviations = tokens;
        }
        Ok(cfg)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(vocab_size);
        if let Some(v) = self.get("hidden")? {
            cfg.hidden = v;
        }
        if let Some(v) = self.get("layers")? {
            cfg.layers = v;
        }
        if let Some(v) = self.get("attention_heads")? {
            cfg.heads = v;
        }
        if let Some(v) = self.get("ff_dim")? {
            cfg.ff_dim = v;
        }
        if let Some(v) = self.get("max_positions")? {
            cfg.max_positions = v;
        }
        if let Some(v) = self.get("head_dim")? {
            cfg.head_dim = v;
        }
        if let Some(v) = self.get("cnn_filters_per_size")? {
            cfg.cnn_filters_per_size = v;
        }
        if let Some(v) = self.map.get("cnn_window_sizes") {
            cfg.cnn_window_sizes = v
                .split(',')
                .map(|s| s.trim().parse().context("bad cnn_window_sizes"))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = self.get("dropout")? {
            cfg.dropout = v;
        }
        if let Some(v) = self.map.get("cls_path") {
            cfg.include_cls_path = parse_on_off(v)?;
        }
        if let Some(v) = self.map.get("head") {
            cfg.head =
                HeadKind::parse(v).with_context(|| format!("unknown head {v:?} (model1|rbert-cnn)"))?;
        }
        // the encoder must cover every encodable sequence
        cfg.max_positions = cfg.max_positions.max(self.max_len()?);
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.get("learning_rate")? {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.get("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.get("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.get("adam_epsilon")? {
            cfg.adam_epsilon = v;
        }
        if let Some(v) = self.get("adam_beta1")? {
            cfg.adam_beta1 = v;
        }
        if let Some(v) = self.get("adam_beta2")? {
            cfg.adam_beta2 = v;
        }
        if let Some(v) = self.get("gradient_accumulation_steps")? {
            cfg.gradient_accumulation_steps = v;
        }
        if let Some(v) = self.get("max_grad_norm")? {
            cfg.max_grad_norm = v;
        }
        if let Some(v) = self.get("weight_decay")? {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.get("warmup_steps")? {
            cfg.warmup_steps = v;
        }
        if let Some(v) = self.get("dropout")? {
            cfg.dropout = v;
        }
        if let Some(v) = self.seed()? {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

pub fn parse_on_off(v: &str) -> Result<bool> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => bail!("expected on|off, got {v:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let s = Settings::parse("# a comment\nhidden=64\nepochs = 3  # trailing\n\n").unwrap();
        let m = s.model_config(100).unwrap();
        assert_eq!(m.hidden, 64);
        let t = s.train_config().unwrap();
        assert_eq!(t.epochs, 3);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Settings::parse("no_such_key=1\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut settings = Settings::parse("epochs=3\nlearning_rate=0.1\n").unwrap();
        settings.set("epochs", "9".into());
        let t = settings.train_config().unwrap();
        assert_eq!(t.epochs, 9);
        assert_eq!(t.learning_rate, 0.1);
    }

    #[test]
    fn defaults_follow_training_recipe() {
        let t = Settings::default().train_config().unwrap();
        assert_eq!(t.learning_rate, 3e-5);
        assert_eq!(t.epochs, 7);
        assert_eq!(t.batch_size, 32);
        assert_eq!(t.adam_epsilon, 1e-8);
        assert_eq!(t.gradient_accumulation_steps, 1);
        assert_eq!(t.max_grad_norm, 1.0);
        assert_eq!(t.weight_decay, 0.0);
        assert_eq!(t.warmup_steps, 0);
        assert_eq!(t.dropout, 0.5);
        assert_eq!(Settings::default().max_len().unwrap(), 512);
    }

    #[test]
    fn head_and_cls_path_keys() {
        let s = Settings::parse("head=model1\ncls_path=off\n").unwrap();
        let m = s.model_config(10).unwrap();
        assert_eq!(m.head, HeadKind::Model1);
        assert!(!m.include_cls_path);
    }
}
