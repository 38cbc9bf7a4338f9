//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Environment variable that overrides the `out_dir` key.
pub const OUT_ENV: &str = "MFQL_OUT";

/// Key/value pairs from a config file plus command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses one `key = value` pair per line. Blank lines and text after `#`
    /// are ignored; repeating a key is an error.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line)
                .ok_or_else(|| CliError::usage(format!("line {}: expected key = value", i + 1)))?;
            if cfg.entries.insert(k.clone(), v).is_some() {
                return Err(CliError::usage(format!(
                    "line {}: duplicate key {k:?}",
                    i + 1
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override, replacing any existing value.
    pub fn set(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = split_pair(pair)
            .ok_or_else(|| CliError::usage(format!("override {pair:?} is not key=value")))?;
        self.entries.insert(k, v);
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Rejects any key outside `allowed`, listing every offender.
    pub fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !allowed.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )))
        }
    }

    pub fn get<T>(&self, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get_str(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    pub fn require<T>(&self, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self
            .get_str(key)
            .ok_or_else(|| CliError::usage(format!("missing required key {key:?}")))?;
        parse_value(key, v)
    }

    /// Comma-separated list, e.g. `64,64,64`.
    pub fn get_list<T>(&self, key: &str, default: &[T]) -> CliResult<Vec<T>>
    where
        T: FromStr + Clone,
        T::Err: Display,
    {
        match self.get_str(key) {
            None => Ok(default.to_vec()),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v.split(',').map(|x| parse_value(key, x.trim())).collect(),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.get_str(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(CliError::usage(format!(
                "{key}: expected a boolean, got {v:?}"
            ))),
        }
    }

    /// Output directory: `env_override` (normally `$MFQL_OUT`) wins over the
    /// `out_dir` key, which wins over `default`.
    pub fn out_dir(&self, env_override: Option<&str>, default: &str) -> PathBuf {
        match env_override.filter(|v| !v.is_empty()) {
            Some(v) => PathBuf::from(v),
            None => PathBuf::from(self.get_str("out_dir").unwrap_or(default)),
        }
    }
}

fn split_pair(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

fn parse_value<T>(key: &str, v: &str) -> CliResult<T>
where
    T: FromStr,
    T::Err: Display,
{
    v.parse()
        .map_err(|e| CliError::usage(format!("{key}: cannot parse {v:?}: {e}")))
}
