//! `key = value` configuration text.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key-value file. Blank lines and `#` comments are ignored; a key may
/// appear only once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValueConfig {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValueConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(n + 1, "expected 'key = value'".into()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(n + 1, "empty key".into()));
            }
            if entries
                .insert(key.to_string(), (n + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(parse_err(n + 1, format!("duplicate key '{key}'")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The value of `key` parsed as `T`, or `None` when absent.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let Some((line, value)) = self.entries.get(key) else {
            return Ok(None);
        };
        value.parse().map(Some).map_err(|e: T::Err| Error::Parse {
            path: self.path.clone(),
            line: *line,
            message: format!("bad value '{value}' for '{key}': {e}"),
        })
    }

    /// Errors on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: *line,
                    message: format!("unknown key '{key}'"),
                });
            }
        }
        Ok(())
    }
}
