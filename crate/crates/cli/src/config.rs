//! Flat `key = value` run configuration.
//!
//! A command declares its keys with defaults. Values come from the
//! defaults, then an optional file, then command-line overrides. The
//! resolved map is written next to the command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thredkit::{Error, Result};

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "THREDKIT_SEED";

/// `None` marks a key without a default; it stays unset until supplied.
pub type KeySpec = (&'static str, Option<&'static str>);

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    command: &'static str,
    known: Vec<&'static str>,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &'static str, keys: &[KeySpec]) -> Self {
        let values = keys
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        Self {
            command,
            known: keys.iter().map(|(k, _)| *k).collect(),
            values,
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !self.known.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?} for {}", self.command)));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies `Some` overrides; `None` leaves the current value.
    pub fn set_opt(&mut self, key: &str, value: Option<impl ToString>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    /// Applies `key=value` assignments given on the command line.
    pub fn apply_assignments(&mut self, items: &[String]) -> Result<()> {
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {item:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Reads a file of `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Falls back to [`SEED_ENV`] when `seed` is still unset.
    pub fn seed_from_env(&mut self) -> Result<()> {
        if !self.values.contains_key("seed") {
            if let Ok(v) = std::env::var(SEED_ENV) {
                self.set("seed", v)?;
            }
        }
        if !self.values.contains_key("seed") {
            self.set("seed", "0")?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value {raw:?} for {key:?}"))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.opt(key)?
            .ok_or_else(|| Error::Config(format!("{} requires {key:?}", self.command)))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get::<String>(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# thredkit {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| io_error(path, e))
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `<file>.run.cfg`, the resolved config written beside a single output file.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.cfg");
    out.with_file_name(name)
}
