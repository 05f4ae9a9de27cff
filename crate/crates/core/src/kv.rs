//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! case-sensitive; duplicate keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: n + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: n + 1,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.clone(), (value.trim().to_string(), n + 1))
                .is_some()
            {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: n + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parses `key` if present, otherwise returns `default`.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((value, line)) => value.parse().map_err(|_| Error::Parse {
                path: self.source.clone(),
                line: *line,
                message: format!("invalid value `{value}` for `{key}`"),
            }),
        }
    }

    /// Comma-separated list value.
    pub fn get_list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((value, line)) => value
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| Error::Parse {
                        path: self.source.clone(),
                        line: *line,
                        message: format!("invalid list element `{}` for `{key}`", s.trim()),
                    })
                })
                .collect(),
        }
    }

    /// Rejects keys outside `known`, so typos do not silently fall back to defaults.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::Parse {
                    path: self.source.clone(),
                    line: *line,
                    message: format!("unknown key `{key}`"),
                });
            }
        }
        Ok(())
    }
}
