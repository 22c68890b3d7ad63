//! Flat `key = value` configuration files with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::formats::{self, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{}:{line}: expected `key = value`", path.display())]
    Syntax { path: PathBuf, line: usize },
    #[error("{}:{line}: duplicate key `{key}`", path.display())]
    Duplicate { path: PathBuf, line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`")]
    Value { key: String, value: String },
}

/// Effective settings: file values first, then overrides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines. `#` starts a comment line; blank lines
    /// are ignored; keys are case-sensitive and use `_` separators.
    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            })?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    path: path.to_path_buf(),
                    line: i + 1,
                });
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    path: path.to_path_buf(),
                    line: i + 1,
                    key,
                });
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = formats::read_lines(path)?.join("\n");
        Self::parse(path, &text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut s = Settings::parse(Path::new("c"), "# c\nepochs = 3\n\nlearning-rate=0.5\n").unwrap();
        assert_eq!(s.get::<usize>("epochs").unwrap(), Some(3));
        assert_eq!(s.get::<f64>("learning_rate").unwrap(), Some(0.5));
        s.set("epochs", "7");
        assert_eq!(s.get_or::<usize>("epochs", 1).unwrap(), 7);
        assert_eq!(s.get_or::<usize>("missing", 1).unwrap(), 1);
        assert!(s.get::<usize>("learning_rate").is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(Settings::parse(Path::new("c"), "novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(
            Settings::parse(Path::new("c"), "a=1\na=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
    }
}
