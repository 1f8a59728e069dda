//! Key-value configuration files. Files are TOML; nested tables and dotted
//! keys are equivalent, so `grid.n = 100` and `[grid]\nn = 100` both set
//! the key `grid.n`.

use crate::grid::DEFAULT_GRID_N;
use crate::mtree::{SplitConfig, DEFAULT_ALPHA, DEFAULT_M};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("syntax error: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("key {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
}

impl ConfigError {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Flattened view of a config file: dotted key to scalar or array value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, toml::Value>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse()?;
        let mut entries = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut entries);
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: toml::Value) {
        self.entries.insert(key.to_string(), value);
    }

    /// Adds every entry of `other`, replacing existing keys.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&toml::Value> {
        self.entries.get(key)
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(ConfigError::invalid(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(ConfigError::invalid(key, format!("expected a number, got {v}"))),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(ConfigError::invalid(key, format!("expected true or false, got {v}"))),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<&str>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(ConfigError::invalid(key, format!("expected a string, got {v}"))),
        }
    }

    /// A string value parsed with `FromStr`.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.string(key)?
            .map(|s| s.parse().map_err(|e: T::Err| ConfigError::invalid(key, e.to_string())))
            .transpose()
    }

    /// A list of numbers; a single number is a one-element list.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let to_f = |v: &toml::Value| match v {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            other => Err(ConfigError::invalid(key, format!("expected numbers, got {other}"))),
        };
        match self.entries.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => items.iter().map(to_f).collect::<Result<_, _>>().map(Some),
            Some(v) => to_f(v).map(|f| Some(vec![f])),
        }
    }

    pub fn u64_list(&self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        let Some(values) = self.f64_list(key)? else {
            return Ok(None);
        };
        values
            .into_iter()
            .map(|f| {
                if f >= 0.0 && f.fract() == 0.0 {
                    Ok(f as u64)
                } else {
                    Err(ConfigError::invalid(key, format!("expected non-negative integers, got {f}")))
                }
            })
            .collect::<Result<_, _>>()
            .map(Some)
    }

    /// Fails on any key under one of `sections` that is not in `known`.
    pub fn reject_unknown(&self, sections: &[&str], known: &[&str]) -> Result<(), ConfigError> {
        for k in self.entries.keys() {
            let section = k.split('.').next().unwrap_or("");
            if sections.contains(&section) && !known.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        Ok(())
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Loopback,
    Socket,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "loopback" => Ok(TransportKind::Loopback),
            "socket" => Ok(TransportKind::Socket),
            other => Err(format!("unknown transport {other:?} (expected loopback or socket)")),
        }
    }
}

pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.5;

/// Topology and index parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub grid_n: u32,
    pub index_workers: u32,
    pub query_workers: u32,
    pub split: SplitConfig,
    pub jaccard_threshold: f64,
    pub seed: u64,
    pub transport: TransportKind,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid_n: DEFAULT_GRID_N,
            index_workers: 4,
            query_workers: 2,
            split: SplitConfig::default(),
            jaccard_threshold: DEFAULT_JACCARD_THRESHOLD,
            seed: 1,
            transport: TransportKind::Loopback,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "grid.n",
    "grid.workers",
    "tree.alpha",
    "tree.m",
    "routing.jaccard_threshold",
    "rng.seed",
    "cluster.index_workers",
    "cluster.query_workers",
    "cluster.transport",
];

impl Config {
    /// Reads the topology keys; keys of other sections are left alone.
    /// `grid.workers` and `cluster.index_workers` name the same count.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.reject_unknown(&["grid", "tree", "routing", "rng", "cluster"], CONFIG_KEYS)?;
        let mut c = Config::default();
        if let Some(n) = kv.u64("grid.n")? {
            c.grid_n = positive_u32("grid.n", n)?;
        }
        match (kv.u64("grid.workers")?, kv.u64("cluster.index_workers")?) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConfigError::invalid(
                    "cluster.index_workers",
                    format!("{b} disagrees with grid.workers = {a}"),
                ))
            }
            (Some(w), _) => c.index_workers = positive_u32("grid.workers", w)?,
            (None, Some(w)) => c.index_workers = positive_u32("cluster.index_workers", w)?,
            (None, None) => {}
        }
        if let Some(w) = kv.u64("cluster.query_workers")? {
            c.query_workers = positive_u32("cluster.query_workers", w)?;
        }
        let alpha = kv.u64("tree.alpha")?.map_or(DEFAULT_ALPHA, |a| a as usize);
        let m = kv.u64("tree.m")?.map_or(DEFAULT_M, |m| m as usize);
        c.split = SplitConfig::new(alpha, m).map_err(|e| ConfigError::invalid("tree", e.to_string()))?;
        if let Some(t) = kv.f64("routing.jaccard_threshold")? {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::invalid("routing.jaccard_threshold", "must lie in [0, 1]"));
            }
            c.jaccard_threshold = t;
        }
        if let Some(s) = kv.u64("rng.seed")? {
            c.seed = s;
        }
        if let Some(t) = kv.parsed("cluster.transport")? {
            c.transport = t;
        }
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_kv(&KeyValues::parse(text)?)
    }
}

fn positive_u32(key: &str, v: u64) -> Result<u32, ConfigError> {
    match u32::try_from(v) {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(ConfigError::invalid(key, format!("must be a positive 32-bit integer, got {v}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_nested_forms_agree() {
        let a = Config::parse("grid.n = 50\ntree.alpha = 10\ntree.m = 4\nrng.seed = 7\n").unwrap();
        let b = Config::parse("[grid]\nn = 50\n[tree]\nalpha = 10\nm = 4\n[rng]\nseed = 7\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid_n, 50);
        assert_eq!(a.split, SplitConfig::new(10, 4).unwrap());
        assert_eq!(a.seed, 7);
    }

    #[test]
    fn defaults_when_empty() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn all_keys() {
        let c = Config::parse(
            r#"
            grid.n = 20
            grid.workers = 3
            tree.alpha = 8
            tree.m = 9
            routing.jaccard_threshold = 0.25
            rng.seed = 99
            cluster.index_workers = 3
            cluster.query_workers = 5
            cluster.transport = "socket"
            experiment.name = "ignored here"
            "#,
        )
        .unwrap();
        assert_eq!(c.index_workers, 3);
        assert_eq!(c.query_workers, 5);
        assert_eq!(c.jaccard_threshold, 0.25);
        assert_eq!(c.transport, TransportKind::Socket);
    }

    #[test]
    fn errors() {
        assert!(matches!(Config::parse("grid.size = 3"), Err(ConfigError::UnknownKey(k)) if k == "grid.size"));
        assert!(matches!(Config::parse("grid.n = 0"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("grid.n = \"x\""), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("tree.m = 1"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("routing.jaccard_threshold = 1.5"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("cluster.transport = \"udp\""), Err(ConfigError::Invalid { .. })));
        assert!(matches!(
            Config::parse("grid.workers = 2\ncluster.index_workers = 3"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(Config::parse("grid.n = "), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn lists() {
        let kv = KeyValues::parse("sweep.m = [2, 4, 6]\nsweep.radius = 0.01\nsweep.bad = [1.5]").unwrap();
        assert_eq!(kv.u64_list("sweep.m").unwrap(), Some(vec![2, 4, 6]));
        assert_eq!(kv.f64_list("sweep.radius").unwrap(), Some(vec![0.01]));
        assert!(kv.u64_list("sweep.bad").is_err());
        assert_eq!(kv.f64_list("sweep.none").unwrap(), None);
    }
}
