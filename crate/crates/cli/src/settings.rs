//! Layered configuration: command-line flags over a TOML file over the
//! built-in defaults. Every resolved value is recorded so the effective
//! configuration can be echoed into the output.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

const DEFAULTS: &str = include_str!("../defaults.toml");

pub struct Settings {
    section: String,
    file: toml::Table,
    defaults: toml::Table,
    effective: Map<String, Value>,
}

impl Settings {
    pub fn new(section: &str, config: Option<&Path>) -> Result<Self> {
        let defaults: toml::Table = DEFAULTS.parse().context("built-in defaults are malformed")?;
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config file {}", p.display()))?;
                text.parse().with_context(|| format!("config file {} is not valid TOML", p.display()))?
            }
            None => toml::Table::new(),
        };
        Ok(Self { section: section.to_string(), file, defaults, effective: Map::new() })
    }

    fn lookup(&self, table: &toml::Table, key: &str) -> Option<toml::Value> {
        table
            .get(&self.section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(key))
            .or_else(|| table.get(key).filter(|v| !v.is_table()))
            .cloned()
    }

    /// Flag, then config file, then built-in default.
    pub fn opt<T: DeserializeOwned + Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.lookup(&self.file, key).or_else(|| self.lookup(&self.defaults, key)) {
                Some(v) => Some(
                    v.try_into()
                        .map_err(|e| anyhow!("config value [{}].{key} has the wrong type: {e}", self.section))?,
                ),
                None => None,
            },
        };
        self.effective.insert(key.to_string(), serde_json::to_value(&value)?);
        Ok(value)
    }

    /// Like [`Settings::opt`] but the value must be present somewhere.
    pub fn req<T: DeserializeOwned + Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.opt(key, flag)?
            .ok_or_else(|| anyhow!("missing value for `{key}`: pass --{} or set [{}].{key} in the config file", key.replace('_', "-"), self.section))
    }

    /// Records a value that has no config-file counterpart.
    pub fn record<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.effective.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn effective(&self) -> Value {
        Value::Object(self.effective.clone())
    }
}
