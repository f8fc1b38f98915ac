//! Run configuration: one TOML document covering corpus, embeddings,
//! models and training, with dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::embed::EmbedConfig;
use crate::nets::{SepConfig, TpeConfig, TsrConfig};
use crate::train::TrainConfig;

pub const RESOLVED_NAME: &str = "resolved_config.toml";
pub const CONFIG_ENV: &str = "TEXTCUE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("override {0:?}: {1}")]
    Override(String, String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub tpe: TrainConfig,
    pub dprnn: TrainConfig,
    pub tsr: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            tpe: TrainConfig {
                lr: 5e-4,
                ..TrainConfig::default()
            },
            dprnn: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            },
            tsr: TrainConfig {
                lr: 1e-4,
                weight_decay: 1e-4,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub corpus: CorpusConfig,
    pub embed: EmbedConfig,
    pub tpe: TpeConfig,
    pub dprnn: SepConfig,
    pub tsr: TsrConfig,
    pub train: TrainSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            embed: EmbedConfig::default(),
            tpe: TpeConfig::default(),
            dprnn: SepConfig::default(),
            tsr: TsrConfig::default(),
            train: TrainSection::default(),
        }
    }
}

impl Config {
    /// Settings sized for CPU training on the default synthetic corpus.
    pub fn desk() -> Self {
        let mut c = Self {
            tpe: TpeConfig::desk(),
            dprnn: SepConfig::desk(),
            tsr: TsrConfig::desk(),
            ..Self::default()
        };
        c.train.tpe.lr = 2e-3;
        c.train.tpe.max_epochs = 8;
        c.train.dprnn.lr = 2e-3;
        c.train.dprnn.max_epochs = 10;
        c.train.tsr.lr = 1e-4;
        c.train.tsr.max_epochs = 4;
        c
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.corpus.validate().map_err(|e| inv(&e))?;
        self.tpe.validate().map_err(|e| inv(&e))?;
        self.dprnn.validate().map_err(|e| inv(&e))?;
        self.tsr.validate().map_err(|e| inv(&e))?;
        for t in [&self.train.tpe, &self.train.dprnn, &self.train.tsr] {
            t.validate().map_err(|e| inv(&e))?;
        }
        if self.embed.dim != self.tpe.d_emb || self.embed.dim != self.tsr.dim {
            return Err(ConfigError::Invalid(format!(
                "embedding width {} differs from tpe.d_emb {} or tsr.dim {}",
                self.embed.dim, self.tpe.d_emb, self.tsr.dim
            )));
        }
        if self.dprnn.streams != self.corpus.interferers + 1 {
            return Err(ConfigError::Invalid(format!(
                "dprnn.streams {} must equal corpus.interferers + 1 = {}",
                self.dprnn.streams,
                self.corpus.interferers + 1
            )));
        }
        Ok(())
    }

    /// Apply `a.b.c=value` overrides in order. Values are read as TOML
    /// (`3`, `1e-3`, `true`, `[1, 2]`, `"s"`); anything else is taken as a
    /// bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = toml::Value::try_from(self)?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(ov.clone(), "expected key=value".into()))?;
            let value = parse_value(raw.trim());
            set_path(&mut tree, key.trim(), value)
                .map_err(|m| ConfigError::Override(ov.clone(), m))?;
        }
        let c: Config = tree.try_into().map_err(|e: toml::de::Error| {
            ConfigError::Override(overrides.join(" "), e.to_string())
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), ConfigError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_NAME), self.to_toml()?)?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty key segment".into());
    }
    let mut cur = tree;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .as_table_mut()
            .and_then(|t| t.get_mut(*p))
            .ok_or_else(|| format!("unknown section {p:?}"))?;
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| "parent is not a table".to_string())?;
    let last = parts[parts.len() - 1];
    match table.get(last) {
        Some(old) if !compatible(old, &value) => Err(format!("type mismatch for {last:?}")),
        // absent keys are optional fields; deserialization decides
        _ => {
            let value = match (table.get(last), value) {
                (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => {
                    toml::Value::Float(i as f64)
                }
                (_, v) => v,
            };
            table.insert(last.to_string(), value);
            Ok(())
        }
    }
}

fn compatible(old: &toml::Value, new: &toml::Value) -> bool {
    use toml::Value::*;
    matches!((old, new), (Float(_), Integer(_)))
        || std::mem::discriminant(old) == std::mem::discriminant(new)
}
