//! Flat dotted-key pipeline configuration.
//!
//! A config file is one JSON object such as `{"train.epochs": 5}`. Keys not
//! listed in [`DEFAULTS`] are rejected, so a stray credential field fails
//! loudly instead of being carried into logs.

use std::collections::BTreeMap;

use serde_json::{Number, Value};
use thiserror::Error;

use crate::imagery::{DEFAULT_ENDPOINT, DEFAULT_RATE_PER_SEC};
use crate::nn::TrainConfig;
use crate::tsne::TsneConfig;
use crate::util::sha256_hex;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}' expects {expected}, got '{value}'")]
    BadValue { key: String, expected: &'static str, value: String },
    #[error("config file is not a JSON object: {0}")]
    NotObject(String),
}

enum Kind {
    Str(&'static str),
    Int(i64),
    Float(f64),
    Bool(bool),
    OptFloat,
}

use Kind::*;

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, Kind)] = &[
    ("paths.segments", Str("segments.json")),
    ("paths.labeled", Str("labeled.json")),
    ("paths.manifest", Str("manifest.csv")),
    ("paths.fetch_status", Str("fetch_status.csv")),
    ("paths.cache", Str("cache")),
    ("paths.model", Str("model.sctx")),
    ("paths.reports", Str("reports")),
    ("paths.runlog", Str("runlog.jsonl")),
    ("city.profile", Str("SanFrancisco")),
    ("label.threshold", Float(0.5)),
    ("sampler.n", Int(600)),
    ("sampler.seed", Int(7)),
    ("imagery.provider", Str("synthetic")),
    ("imagery.seed", Int(0)),
    ("imagery.width", Int(640)),
    ("imagery.height", Int(640)),
    ("imagery.endpoint", Str(DEFAULT_ENDPOINT)),
    ("imagery.rate", Float(DEFAULT_RATE_PER_SEC)),
    ("fetch.parallelism", Int(4)),
    ("split.ratio", Float(0.8)),
    ("split.seed", Int(11)),
    ("train.epochs", Int(20)),
    ("train.batch_size", Int(16)),
    ("train.lr", Float(0.05)),
    ("train.momentum", Float(0.9)),
    ("train.seed", Int(1)),
    ("train.input_size", Int(64)),
    ("tsne.perplexity", OptFloat),
    ("tsne.iterations", Int(1000)),
    ("tsne.lr", Float(200.0)),
    ("tsne.seed", Int(0)),
    ("tsne.standardize", Bool(false)),
    ("cam.alpha", Float(0.5)),
    ("cam.limit", Int(0)),
];

fn default_value(d: &Kind) -> Value {
    match *d {
        Str(s) => Value::String(s.into()),
        Int(i) => Value::from(i),
        Float(f) => Value::from(f),
        Bool(b) => Value::Bool(b),
        OptFloat => Value::Null,
    }
}

fn spec(key: &str) -> Result<&'static Kind, ConfigError> {
    DEFAULTS.iter().find(|(k, _)| *k == key).map(|(_, d)| d).ok_or_else(|| ConfigError::UnknownKey(key.into()))
}

/// Checks `value` against the key's type, converting where lossless.
fn coerce(key: &str, value: Value) -> Result<Value, ConfigError> {
    let bad = |expected, v: &Value| ConfigError::BadValue { key: key.into(), expected, value: v.to_string() };
    match (spec(key)?, &value) {
        (Str(_), Value::String(_)) | (Bool(_), Value::Bool(_)) => Ok(value),
        (Int(_), Value::Number(n)) if n.as_i64().is_some_and(|i| i >= 0) => Ok(value),
        (Float(_) | OptFloat, Value::Number(n)) => Ok(Value::Number(Number::from_f64(n.as_f64().unwrap()).unwrap())),
        (OptFloat, Value::Null) => Ok(value),
        (Str(_), v) => Err(bad("a string", v)),
        (Int(_), v) => Err(bad("a non-negative integer", v)),
        (Float(_), v) => Err(bad("a number", v)),
        (Bool(_), v) => Err(bad("true or false", v)),
        (OptFloat, v) => Err(bad("a number or null", v)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    values: BTreeMap<String, Value>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, d)| (k.to_string(), default_value(d))).collect() }
    }
}

impl PipelineConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        DEFAULTS.iter().map(|(k, _)| *k)
    }

    /// Defaults overlaid with the keys of a JSON object.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::NotObject(e.to_string()))?;
        let Value::Object(map) = doc else {
            return Err(ConfigError::NotObject("top level must be an object".into()));
        };
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set_value(&k, v)?;
        }
        Ok(cfg)
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<(), ConfigError> {
        let v = coerce(key, value)?;
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Sets a key from command-line text, parsed by the key's type.
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), ConfigError> {
        let value = match spec(key)? {
            Str(_) => Value::String(text.into()),
            OptFloat if text == "null" => Value::Null,
            _ => serde_json::from_str(text).map_err(|_| ConfigError::BadValue {
                key: key.into(),
                expected: "a JSON scalar",
                value: text.into(),
            })?,
        };
        self.set_value(key, value)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values[key].as_str().expect("typed at insertion")
    }

    pub fn int(&self, key: &str) -> u64 {
        self.values[key].as_u64().expect("typed at insertion")
    }

    pub fn float(&self, key: &str) -> f64 {
        self.values[key].as_f64().expect("typed at insertion")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.values[key].as_bool().expect("typed at insertion")
    }

    /// Canonical JSON: keys sorted, one object.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.values).expect("values serialize")
    }

    /// sha256 of the compact canonical JSON.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.values).expect("values serialize").as_bytes())
    }

    /// Every non-path key with its value, for echoing into reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .filter(|(k, _)| !k.starts_with("paths."))
            .map(|(k, v)| (k.clone(), v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
            .collect()
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.int("imagery.width") as u32, self.int("imagery.height") as u32)
    }

    pub fn train_config(&self) -> TrainConfig {
        let side = self.int("train.input_size") as u32;
        TrainConfig {
            epochs: self.int("train.epochs") as usize,
            batch_size: self.int("train.batch_size") as usize,
            learning_rate: self.float("train.lr"),
            momentum: self.float("train.momentum"),
            seed: self.int("train.seed"),
            input_size: (side, side),
        }
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.values["tsne.perplexity"].as_f64(),
            iterations: self.int("tsne.iterations") as usize,
            learning_rate: self.float("tsne.lr"),
            seed: self.int("tsne.seed"),
            standardize: self.bool("tsne.standardize"),
            ..TsneConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed() {
        let mut c = PipelineConfig::default();
        c.set("train.lr", "0.01").unwrap();
        c.set("train.epochs", "3").unwrap();
        c.set("tsne.perplexity", "5").unwrap();
        c.set("paths.cache", "c/").unwrap();
        assert_eq!(c.float("train.lr"), 0.01);
        assert_eq!(c.train_config().epochs, 3);
        assert_eq!(c.tsne_config().perplexity, Some(5.0));
        assert_eq!(c.str("paths.cache"), "c/");
        assert!(matches!(c.set("train.epochs", "2.5"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.set("train.epochs", "-1"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.set("imagery.api_key", "x"), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn file_round_trip_and_hash() {
        let c = PipelineConfig::from_json(r#"{"sampler.n": 12, "train.lr": 1}"#).unwrap();
        assert_eq!(c.int("sampler.n"), 12);
        assert_eq!(c.float("train.lr"), 1.0);
        let again = PipelineConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        assert_ne!(c.hash(), PipelineConfig::default().hash());
        assert!(PipelineConfig::from_json("[1]").is_err());
        assert!(PipelineConfig::from_json(r#"{"key": "secret"}"#).is_err());
    }

    #[test]
    fn echo_skips_paths() {
        let echo = PipelineConfig::default().echo();
        assert!(echo.iter().all(|(k, _)| !k.starts_with("paths.")));
        assert!(echo.contains(&("train.seed".to_string(), "1".to_string())));
        assert!(echo.contains(&("city.profile".to_string(), "SanFrancisco".to_string())));
    }
}
