//! Flat `key=value` run configuration merged under command-line flags.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{usage, CliResult};

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    /// Relative paths in the file are resolved against its directory.
    base: PathBuf,
}

/// Keys are flag names; `_` and `-` are interchangeable.
fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str, base: PathBuf, known: &HashSet<String>) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!("config line {}: expected key=value", i + 1)));
            };
            let key = normalize_key(key);
            if !known.contains(&key) {
                return Err(usage(format!("config line {}: unknown key '{key}'", i + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(usage(format!("config line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(Self { values, base })
    }

    pub fn load(path: &Path, known: &HashSet<String>) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, known)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// `flag`, else the config value, else `None`.
    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("config key '{key}': cannot parse '{v}'"))),
            None => Ok(None),
        }
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn req<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<T> {
        self.opt(flag, key)?
            .ok_or_else(|| usage(format!("missing required --{key}")))
    }

    /// Boolean switches: set on the command line or `key=true` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> CliResult<bool> {
        if flag {
            return Ok(true);
        }
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(usage(format!("config key '{key}': expected a boolean, got '{v}'"))),
        }
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.raw(key).map(|v| self.base.join(v)))
    }

    pub fn req_path(&self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        self.path(flag, key)
            .ok_or_else(|| usage(format!("missing required --{key}")))
    }

    /// A required input file that must already exist.
    pub fn input(&self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        let p = self.req_path(flag, key)?;
        existing(p, key)
    }

    pub fn opt_input(&self, flag: Option<PathBuf>, key: &str) -> CliResult<Option<PathBuf>> {
        self.path(flag, key).map(|p| existing(p, key)).transpose()
    }
}

fn existing(p: PathBuf, key: &str) -> CliResult<PathBuf> {
    if !p.is_file() {
        return Err(usage(format!("--{key}: no such file {}", p.display())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known() -> HashSet<String> {
        ["k", "epochs", "input", "center", "batch-size"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_override_file() {
        let c = ConfigFile::parse("# comment\nk = 5\nbatch_size=64\ncenter=true\n", "/data".into(), &known()).unwrap();
        assert_eq!(c.or(None, "k", 3usize).unwrap(), 5);
        assert_eq!(c.or(Some(7usize), "k", 3).unwrap(), 7);
        assert_eq!(c.or(None, "epochs", 10usize).unwrap(), 10);
        assert_eq!(c.req::<usize>(None, "batch-size").unwrap(), 64);
        assert!(c.switch(false, "center").unwrap());
        assert!(c.req::<usize>(None, "epochs").is_err());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ConfigFile::parse("bogus=1", PathBuf::new(), &known()).is_err());
        assert!(ConfigFile::parse("k", PathBuf::new(), &known()).is_err());
        assert!(ConfigFile::parse("k=1\nk=2", PathBuf::new(), &known()).is_err());
        let c = ConfigFile::parse("k=abc", PathBuf::new(), &known()).unwrap();
        assert!(c.opt::<usize>(None, "k").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let c = ConfigFile::parse("input=x.fvecs", "/data".into(), &known()).unwrap();
        assert_eq!(c.path(None, "input").unwrap(), PathBuf::from("/data/x.fvecs"));
        assert_eq!(c.path(Some("y".into()), "input").unwrap(), PathBuf::from("y"));
    }
}
