//! `key=value` defaults file. Keys are long flag names without dashes.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use microcolor::{Error, Result};

const KNOWN_KEYS: &[&str] = &[
    "aggregate",
    "arch",
    "batch-size",
    "bin-width",
    "bins",
    "block",
    "budget",
    "checkpoint-every",
    "edge-threshold",
    "epochs",
    "lr",
    "min-delta",
    "offset",
    "patience",
    "ratio",
    "resize",
    "seed",
    "split-seed",
    "threshold",
    "window",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("config line {}: expected key=value", i + 1))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Argument(format!(
                    "config line {}: unknown key {key:?}",
                    i + 1
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                Self::parse(&text)
            }
        }
    }

    /// Command-line value, else file value, else `default`.
    pub fn pick<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.pick_opt(cli, key)?.unwrap_or(default))
    }

    /// Command-line value, else file value.
    pub fn pick_opt<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Argument(format!("config value {v:?} for {key} does not parse"))
            }),
        }
    }
}
