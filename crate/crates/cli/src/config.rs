//! Flat `key = value` run configuration.
//!
//! Keys are the long flag names of a subcommand (`-` and `_` are
//! interchangeable). Blank lines and text after `#` are ignored. Flags given
//! on the command line win over the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum ConfigError {
    Read { path: PathBuf, source: std::io::Error },
    Syntax { line: usize, msg: String },
    UnknownKey { key: String, command: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read { path, source } => write!(f, "cannot read config {}: {source}", path.display()),
            ConfigError::Syntax { line, msg } => write!(f, "config line {line}: {msg}"),
            ConfigError::UnknownKey { key, command } => write!(f, "unknown config key `{key}` for `{command}`"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| ConfigError::Syntax {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (k, v) = line.split_once('=').ok_or_else(|| syntax("expected `key = value`"))?;
            let key = normalize(k);
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return Err(syntax("keys use letters, digits, `-` and `_`"));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(syntax(&format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize(key)).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Fails on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[String], command: &str) -> Result<(), ConfigError> {
        match self.entries.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey {
                key: k.clone(),
                command: command.to_string(),
            }),
            None => Ok(()),
        }
    }
}
