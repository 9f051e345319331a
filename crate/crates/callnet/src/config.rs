//! Plain-text `key = value` configuration with `[section]` prefixes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Flat map of dotted keys to raw string values.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: unterminated section header", no + 1))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    bail!("line {}: bad section name '{name}'", no + 1);
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
            let k = k.trim();
            if k.is_empty() {
                bail!("line {}: empty key", no + 1);
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key '{key}'", no + 1);
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn value<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("config key '{key}': {e}")),
        }
    }

    /// Comma-separated list; absent or empty yields `default`.
    pub fn list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some("") => Ok(default),
            Some(v) => v.split(',').map(|s| s.trim().parse().map_err(|e| anyhow!("config key '{key}': {e}"))).collect(),
        }
    }

    /// Fails on any key not listed in `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !known.contains(k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(())
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let c = Config::parse("seed = 3\n[grid]\ndirections = undirected, outgoing # two\n\n[ci]\nthreshold=1e-5\n")
            .unwrap();
        assert_eq!(c.get("seed"), Some("3"));
        assert_eq!(c.get("grid.directions"), Some("undirected, outgoing"));
        assert_eq!(c.value("ci.threshold", 0.0).unwrap(), 1e-5);
        let dirs: Vec<String> = c.list("grid.directions", vec![]).unwrap();
        assert_eq!(dirs, ["undirected", "outgoing"]);
    }

    #[test]
    fn dotted_keys_without_section() {
        let c = Config::parse("grid.learner = no-nlb").unwrap();
        assert_eq!(c.get("grid.learner"), Some("no-nlb"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Config::parse("just words").is_err());
        assert!(Config::parse("[open").is_err());
        assert!(Config::parse("a=1\na=2").is_err());
        let c = Config::parse("x = nope").unwrap();
        assert!(c.value::<f64>("x", 0.0).is_err());
        assert!(c.check_keys(&["y"]).is_err());
    }

    #[test]
    fn display_round_trips() {
        let c = Config::parse("[a]\nb = 1\nc = x,y\n").unwrap();
        assert_eq!(Config::parse(&c.to_string()).unwrap(), c);
    }
}
