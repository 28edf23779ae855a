//! Flat `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: usize },
    Flag,
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Flag => write!(f, "command line"),
            Origin::Default => write!(f, "default"),
        }
    }
}

/// Error in the configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, (String, Origin)>,
}

impl Config {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = Origin::File { path: path.to_string(), line: i + 1 };
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError(format!("{origin}: expected `key = value`, got {line:?}")));
            };
            let key = k.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ConfigError(format!("{origin}: bad key {key:?}")));
            }
            if let Some((_, prev)) = cfg.values.get(key) {
                return Err(ConfigError(format!("{origin}: key {key:?} already set at {prev}")));
            }
            cfg.values.insert(key.to_string(), (v.trim().to_string(), origin));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: cannot read config: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Command-line value; replaces any file value.
    pub fn set_flag(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), (value.into(), Origin::Flag));
    }

    pub fn set_default(&mut self, key: &str, value: impl Into<String>) {
        self.values.entry(key.to_string()).or_insert((value.into(), Origin::Default));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.values.get(key).map_or(Origin::Default, |(_, o)| o.clone())
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Error that points at where `key` was set.
    pub fn error(&self, key: &str, msg: impl fmt::Display) -> ConfigError {
        ConfigError(format!("{}: {key}: {msg}", self.origin(key)))
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some((v, _)) => {
                v.parse().map_err(|_| self.error(key, format!("cannot parse {v:?} as {}", std::any::type_name::<T>())))
            }
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
    where
        T: Clone,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some((v, _)) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| self.error(key, format!("bad list entry {s:?}"))))
                .collect(),
        }
    }

    /// Keys other than `allowed` are rejected.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(self.error(key, "unknown key for this command"));
            }
        }
        Ok(())
    }

    /// Sorted `key=value` pairs, for the report header.
    pub fn echo(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = Config::parse("# sweep\na = 8\n\nk=64 # override\n", "x.cfg").unwrap();
        assert_eq!(c.get("a", 0i64).unwrap(), 8);
        c.set_flag("a", "16");
        assert_eq!(c.get("a", 0i64).unwrap(), 16);
        assert_eq!(c.get_list("w", &[1u32, 2]).unwrap(), vec![1, 2]);
        assert_eq!(c.origin("k"), Origin::File { path: "x.cfg".into(), line: 4 });
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Config::parse("a = 1\noops\n", "f.cfg").unwrap_err();
        assert!(e.0.starts_with("f.cfg:2:"), "{e}");
        let c = Config::parse("a = x\n", "f.cfg").unwrap();
        let e = c.get("a", 0i64).unwrap_err();
        assert!(e.0.starts_with("f.cfg:1: a:"), "{e}");
        let e = Config::parse("a = 1\na = 2\n", "f.cfg").unwrap_err();
        assert!(e.0.contains("already set at f.cfg:1"), "{e}");
    }
}
